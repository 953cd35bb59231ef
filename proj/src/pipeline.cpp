#include "eit/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "eit/errors.hpp"

namespace eit {

std::string to_string(Method m) {
    switch (m) {
        case Method::Gn: return "gn";
        case Method::Pdipm: return "pdipm";
        case Method::AnnDirect: return "ann-direct";
        case Method::GnAnn: return "gn-ann";
    }
    return "?";
}

Method method_from_string(const std::string& s) {
    if (s == "gn") return Method::Gn;
    if (s == "pdipm") return Method::Pdipm;
    if (s == "ann-direct") return Method::AnnDirect;
    if (s == "gn-ann") return Method::GnAnn;
    throw FormatError("unknown method: " + s);
}

std::vector<Method> parse_methods(const std::string& csv) {
    std::vector<Method> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(method_from_string(item));
    if (out.empty()) throw FormatError("no methods given");
    return out;
}

Preset Preset::named(const std::string& name) {
    Preset p;
    p.name = name;
    if (name == "desk") {
        p.inverse = refinement_preset("desk");
        p.generation = refinement_preset("desk-generation");
        p.train_count = 300;
    } else if (name == "paper") {
        p.inverse = refinement_preset("paper");
        p.generation = refinement_preset("paper-generation");
        p.train_count = 3000;
    } else {
        throw FormatError("unknown preset: " + name);
    }
    p.train = TrainConfig::preset(name);
    return p;
}

Workspace Workspace::build(const Preset& preset, bool with_matrix, const Mesh* inverse) {
    Workspace ws;
    ws.preset = preset;
    ws.inverse = inverse ? *inverse : build_mesh(preset.geometry, preset.inverse);
    ws.generation = build_mesh(preset.geometry, preset.generation);
    ws.pattern = StimPattern::adjacent(preset.geometry);
    ws.schedule = MeasurementSchedule::adjacent(preset.geometry, ws.pattern);
    ws.jacobian = compute_jacobian(ws.inverse, ConductivityField::uniform(ws.inverse, preset.gn.sigma_ref), ws.pattern,
                                   ws.schedule);
    if (with_matrix) ws.r = build_reconstruction_matrix(ws.jacobian, ws.inverse, preset.gn);
    return ws;
}

Eigen::MatrixXd postproc_inputs(const Dataset& ds) {
    if (ds.samples.empty()) throw DimensionError("empty dataset");
    Eigen::MatrixXd x(Eigen::Index(ds.samples.size()), ds.samples[0].gn_image.values.size());
    for (std::size_t i = 0; i < ds.samples.size(); ++i) x.row(Eigen::Index(i)) = ds.samples[i].gn_image.values.transpose();
    return x;
}

Eigen::MatrixXd direct_inputs(const Dataset& ds) {
    if (ds.samples.empty()) throw DimensionError("empty dataset");
    Eigen::MatrixXd x(Eigen::Index(ds.samples.size()), ds.v_ref.values.size());
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        x.row(Eigen::Index(i)) = frame_difference(ds.samples[i].v_noisy, ds.v_ref).values.transpose();
    return x;
}

Eigen::MatrixXd truth_targets(const Dataset& ds) {
    if (ds.samples.empty()) throw DimensionError("empty dataset");
    Eigen::MatrixXd t(Eigen::Index(ds.samples.size()), ds.samples[0].truth_nodal.values.size());
    for (std::size_t i = 0; i < ds.samples.size(); ++i) t.row(Eigen::Index(i)) = ds.samples[i].truth_nodal.values.transpose();
    return t;
}

TrainResult train_postproc(const Dataset& ds, const TrainConfig& cfg, std::uint64_t schedule_id) {
    TrainResult res = train(postproc_inputs(ds), truth_targets(ds), RbfMode::PostProc, cfg, ds.inverse_mesh_id, schedule_id);
    res.model.gn_config_hash = ds.gn_config_hash;
    return res;
}

TrainResult train_direct(const Dataset& ds, const TrainConfig& cfg) {
    return train(direct_inputs(ds), truth_targets(ds), RbfMode::Direct, cfg, ds.inverse_mesh_id, ds.schedule_id);
}

NodalImage reconstruct_sample(Method method, const Sample& s, const Dataset& ds, const Workspace& ws,
                              const Models& models, const PdipmSolver* pdipm) {
    const VoltageFrame dv = frame_difference(s.v_noisy, ds.v_ref);
    switch (method) {
        case Method::Gn: return reconstruct_gn(ws.r, dv, ws.inverse);
        case Method::GnAnn:
            if (!models.postproc) throw FormatError("gn-ann needs a post-processing model");
            return predict(*models.postproc, reconstruct_gn(ws.r, dv, ws.inverse));
        case Method::AnnDirect:
            if (!models.direct) throw FormatError("ann-direct needs a direct model");
            return predict(*models.direct, dv);
        case Method::Pdipm:
            if (!pdipm) throw FormatError("pdipm needs a solver");
            try {
                return pdipm->solve(dv).image;
            } catch (const LineSearchError& e) {
                return e.best().image;
            }
    }
    throw FormatError("unknown method");
}

SweepResult run_sweep(const Dataset& suite, const Workspace& ws, const Models& models,
                      const std::vector<Method>& methods, const PdipmSolver* pdipm) {
    if (suite.inverse_mesh_id != ws.inverse.id()) throw ProvenanceError("suite was generated for a different inverse mesh");
    if (suite.schedule_id != ws.schedule.id()) throw ProvenanceError("suite was generated with a different schedule");
    const VoxelMap map(ws.inverse, ws.preset.grid.geometry());
    SweepResult out;
    for (Method m : methods) {
        const std::string name = to_string(m);
        double total = 0.0;
        for (std::size_t i = 0; i < suite.samples.size(); ++i) {
            const Sample& s = suite.samples[i];
            char id[32];
            std::snprintf(id, sizeof id, "case%04zu", i);
            const auto t0 = std::chrono::steady_clock::now();
            NodalImage img;
            try {
                img = reconstruct_sample(m, s, suite, ws, models, pdipm);
            } catch (const SolverError& e) {
                throw SolverError(std::string(id) + " (" + name + "): " + e.what());
            }
            total += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            ErrorReport r = full_report(map, img, s.target, s.distance, name);
            r.case_id = id;
            out.failures[name] += r.degenerate;
            out.reports.push_back(std::move(r));
            out.images.push_back(std::move(img));
        }
        out.seconds[name] = suite.samples.empty() ? 0.0 : total / double(suite.samples.size());
    }
    return out;
}

std::map<std::string, std::map<double, double>> mean_nade(const std::vector<ErrorReport>& reports) {
    std::map<std::string, std::map<double, std::pair<double, int>>> acc;
    for (const auto& r : reports) {
        // Distances are grouped at 1e-6 resolution.
        const double key = std::round(r.distance * 1e6) / 1e6;
        auto& a = acc[r.method][key];
        a.first += r.nade;
        ++a.second;
    }
    std::map<std::string, std::map<double, double>> out;
    for (const auto& [m, by] : acc)
        for (const auto& [d, a] : by) out[m][d] = a.first / a.second;
    return out;
}

namespace {
std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = 0.5 * double(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}
}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) throw DimensionError("spearman needs two equal series of length >= 2");
    const auto ra = ranks(a), rb = ranks(b);
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / double(ra.size());
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / double(rb.size());
    double num = 0, da = 0, db = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        num += (ra[i] - ma) * (rb[i] - mb);
        da += (ra[i] - ma) * (ra[i] - ma);
        db += (rb[i] - mb) * (rb[i] - mb);
    }
    if (da == 0 || db == 0) return 0.0;
    return num / std::sqrt(da * db);
}

}  // namespace eit
