// eitpp: command-line front end for mesh building, dataset generation,
// training, reconstruction and metric sweeps.

#include <sys/resource.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "eit/datagen.hpp"
#include "eit/errors.hpp"
#include "eit/hash.hpp"
#include "eit/io.hpp"
#include "eit/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace eit;

namespace {

constexpr int kOk = 0, kConfig = 2, kProvenance = 3, kSolver = 4;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Options {
    // global
    std::uint64_t seed = 1;
    std::string preset = "desk";
    int threads = 1;
    std::string config;
    // paths
    std::string out, mesh, dataset, model, model_postproc, model_direct, matrix, frame, ref, input, trace;
    // mesh
    bool generation = false;
    std::optional<double> electrode_arc, electrode_height, layer_pitch, probe_radius, tank_radius, near_edge, far_edge;
    // data
    std::size_t count = 0;  // 0: preset size
    std::string distances;
    std::size_t cases_per_distance = 7;
    std::size_t train_count = 0;
    bool noise = false;
    double snr_near = 50.0, snr_far = 10.0;
    double min_distance = 0.0, max_distance = 10.0;
    // methods and models
    std::string method = "gn";
    std::string methods = "gn,pdipm,ann-direct,gn-ann";
    std::string mode = "postproc";
    int hidden = 0;  // 0: preset
    std::optional<double> alpha, lambda;
    long case_index = -1;
    bool images = true;
};

std::vector<double> parse_list(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError("not a number: " + item);
        }
    }
    return out;
}

// Keys of a --config file. Dashes and underscores are interchangeable.
void apply_config_file(Options& o, const std::string& path) {
    json j;
    try {
        j = json::parse(read_text(path));
    } catch (const json::exception& e) {
        throw ConfigError("config file: " + std::string(e.what()));
    } catch (const FormatError& e) {
        throw ConfigError(e.what());
    }
    if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
    using Setter = std::function<void(const json&)>;
    auto str = [](std::string& f) -> Setter { return [&f](const json& v) { f = v.get<std::string>(); }; };
    auto num = [](double& f) -> Setter { return [&f](const json& v) { f = v.get<double>(); }; };
    auto opt = [](std::optional<double>& f) -> Setter { return [&f](const json& v) { f = v.get<double>(); }; };
    auto flag = [](bool& f) -> Setter { return [&f](const json& v) { f = v.get<bool>(); }; };
    auto list = [](std::string& f) -> Setter {
        return [&f](const json& v) {
            if (!v.is_array()) {
                f = v.get<std::string>();
                return;
            }
            std::ostringstream ss;
            ss << std::setprecision(17);
            for (std::size_t i = 0; i < v.size(); ++i) {
                if (i) ss << ',';
                if (v[i].is_string()) ss << v[i].get<std::string>();
                else ss << v[i].get<double>();
            }
            f = ss.str();
        };
    };
    const std::map<std::string, Setter> setters = {
        {"seed", [&](const json& v) { o.seed = v.get<std::uint64_t>(); }},
        {"preset", str(o.preset)},
        {"threads", [&](const json& v) { o.threads = v.get<int>(); }},
        {"out", str(o.out)},
        {"mesh", str(o.mesh)},
        {"dataset", str(o.dataset)},
        {"model", str(o.model)},
        {"model_postproc", str(o.model_postproc)},
        {"model_direct", str(o.model_direct)},
        {"matrix", str(o.matrix)},
        {"frame", str(o.frame)},
        {"ref", str(o.ref)},
        {"input", str(o.input)},
        {"trace", str(o.trace)},
        {"generation", flag(o.generation)},
        {"electrode_arc", opt(o.electrode_arc)},
        {"electrode_height", opt(o.electrode_height)},
        {"layer_pitch", opt(o.layer_pitch)},
        {"probe_radius", opt(o.probe_radius)},
        {"tank_radius", opt(o.tank_radius)},
        {"near_edge", opt(o.near_edge)},
        {"far_edge", opt(o.far_edge)},
        {"count", [&](const json& v) { o.count = v.get<std::size_t>(); }},
        {"distances", list(o.distances)},
        {"cases_per_distance", [&](const json& v) { o.cases_per_distance = v.get<std::size_t>(); }},
        {"train_count", [&](const json& v) { o.train_count = v.get<std::size_t>(); }},
        {"noise", flag(o.noise)},
        {"snr_near", num(o.snr_near)},
        {"snr_far", num(o.snr_far)},
        {"min_distance", num(o.min_distance)},
        {"max_distance", num(o.max_distance)},
        {"method", str(o.method)},
        {"methods", list(o.methods)},
        {"mode", str(o.mode)},
        {"hidden", [&](const json& v) { o.hidden = v.get<int>(); }},
        {"alpha", opt(o.alpha)},
        {"lambda", opt(o.lambda)},
        {"case", [&](const json& v) { o.case_index = v.get<long>(); }},
        {"images", flag(o.images)},
    };
    for (const auto& [key, value] : j.items()) {
        std::string k = key;
        std::replace(k.begin(), k.end(), '-', '_');
        const auto it = setters.find(k);
        if (it == setters.end()) throw ConfigError("unknown config key: " + key);
        try {
            it->second(value);
        } catch (const json::exception&) {
            throw ConfigError("config key " + key + " has the wrong type");
        }
    }
}

Preset make_preset(const Options& o) {
    if (o.preset != "desk" && o.preset != "paper") throw ConfigError("--preset must be desk or paper");
    if (o.threads < 1) throw ConfigError("--threads must be at least 1");
    Preset p = Preset::named(o.preset);
    if (o.electrode_arc) p.geometry.electrode_arc = *o.electrode_arc;
    if (o.electrode_height) p.geometry.electrode_height = *o.electrode_height;
    if (o.layer_pitch) p.geometry.layer_pitch = *o.layer_pitch;
    if (o.probe_radius) p.geometry.probe_radius = *o.probe_radius;
    if (o.tank_radius) p.geometry.tank_radius = *o.tank_radius;
    if (o.near_edge) p.inverse.near_edge = p.generation.near_edge = *o.near_edge;
    if (o.far_edge) p.inverse.far_edge = p.generation.far_edge = *o.far_edge;
    if (o.hidden > 0) p.train.hidden_count = o.hidden;
    if (o.alpha) p.pdipm.alpha = *o.alpha;
    if (o.lambda) p.gn.lambda = *o.lambda;
    p.train.seed = o.seed;
    p.noise = NoiseModel{o.snr_near, o.snr_far};
    p.geometry.check();
    p.gn.check();
    p.pdipm.check();
    p.train.check();
    if (o.noise) p.noise.check();
    return p;
}

// Hash of the settings that shape results. Paths, seed and threads are excluded.
std::uint64_t config_hash(const Options& o, const Preset& p) {
    Fnv1a h;
    h.add(p.name);
    const auto& g = p.geometry;
    h.add(g.probe_radius).add(g.tank_radius).add(g.electrode_arc).add(g.electrode_height).add(g.layer_pitch);
    h.add(p.inverse.near_edge).add(p.inverse.far_edge).add(p.generation.near_edge).add(p.generation.far_edge);
    h.add(p.gn.hash()).add(p.pdipm.hash()).add(p.train.hash());
    h.add(std::uint8_t(o.noise)).add(o.snr_near).add(o.snr_far).add(o.min_distance).add(o.max_distance);
    h.add(o.distances).add(std::uint64_t(o.cases_per_distance)).add(std::uint64_t(o.train_count));
    h.add(std::uint64_t(o.count)).add(o.methods);
    return h.value();
}

std::string hex(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string provenance_line(const Options& o, const Preset& p) {
    return "eitpp preset=" + p.name + " config_hash=" + hex(config_hash(o, p)) + " seed=" + std::to_string(o.seed);
}

void require(const std::string& value, const char* flag) {
    if (value.empty()) throw ConfigError(std::string(flag) + " is required");
}

void log(const std::string& msg) {
    std::fprintf(stderr, "%s\n", msg.c_str());
    std::fflush(stderr);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Workspace with R built, or loaded from / cached into --matrix.
Workspace open_workspace(const Options& o, const Preset& p, bool need_matrix) {
    std::optional<Mesh> custom;
    if (!o.mesh.empty()) custom = load_mesh(o.mesh);
    const bool cached = need_matrix && !o.matrix.empty() && fs::exists(o.matrix);
    const auto t0 = std::chrono::steady_clock::now();
    Workspace ws = Workspace::build(p, need_matrix && !cached, custom ? &*custom : nullptr);
    if (cached) {
        ws.r = load_reconstruction_matrix(o.matrix);
        if (ws.r.mesh_id != ws.inverse.id()) throw ProvenanceError("matrix " + o.matrix + " was built for another mesh");
        if (ws.r.config_hash != p.gn.hash()) throw ProvenanceError("matrix " + o.matrix + " was built with other GN settings");
    } else if (need_matrix && !o.matrix.empty()) {
        save_reconstruction_matrix(ws.r, o.matrix);
    }
    log("workspace ready in " + std::to_string(seconds_since(t0)) + " s");
    return ws;
}

void check_dataset(const Dataset& ds, const Workspace& ws, bool need_gn) {
    if (ds.inverse_mesh_id != ws.inverse.id()) throw ProvenanceError("dataset was generated for a different inverse mesh");
    if (ds.schedule_id != ws.schedule.id()) throw ProvenanceError("dataset uses a different measurement schedule");
    if (need_gn && ds.gn_config_hash != ws.r.config_hash)
        throw ProvenanceError("dataset GN images come from different GN settings");
}

void check_model(const RbfModel& m, RbfMode mode, const Workspace& ws, const std::string& path) {
    if (m.mode != mode) throw ConfigError(path + " is a " + to_string(m.mode) + " model");
    if (m.mesh_id != ws.inverse.id()) throw ProvenanceError(path + " was trained for a different inverse mesh");
    if (m.schedule_id != ws.schedule.id()) throw ProvenanceError(path + " was trained with a different schedule");
    if (mode == RbfMode::PostProc && m.gn_config_hash != ws.r.config_hash)
        throw ProvenanceError(path + " was trained on GN images from different GN settings");
}

bool needs_gn(const std::vector<Method>& ms) {
    for (Method m : ms)
        if (m == Method::Gn || m == Method::GnAnn) return true;
    return false;
}

bool has(const std::vector<Method>& ms, Method m) { return std::find(ms.begin(), ms.end(), m) != ms.end(); }

DatasetConfig dataset_config(const Options& o, const Preset& p, std::size_t count, std::uint64_t seed,
                             const std::vector<double>& fixed, bool noisy) {
    DatasetConfig c;
    c.count = count;
    c.seed = seed;
    c.bounds = p.bounds;
    c.bounds.min_distance = o.min_distance;
    c.bounds.max_distance = o.max_distance;
    c.noise = noisy ? p.noise : NoiseModel::off();
    c.threads = o.threads;
    c.fixed_distances = fixed;
    return c;
}

// Suite size: one block of cases per distance.
std::vector<double> suite_distances(const Options& o, std::size_t& count) {
    auto d = parse_list(o.distances.empty() ? "1,2,3" : o.distances);
    if (d.empty()) throw ConfigError("--distances is empty");
    if (o.cases_per_distance < 1) throw ConfigError("--cases-per-distance must be at least 1");
    count = d.size() * o.cases_per_distance;
    return d;
}

template <class F>
void write_file(const fs::path& path, F&& body) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw FormatError("cannot write " + path.string());
    body(os);
    if (!os) throw FormatError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------

int cmd_mesh(const Options& o) {
    require(o.out, "--out");
    const Preset p = make_preset(o);
    RefinementSpec spec = o.generation ? p.generation : p.inverse;
    const Mesh m = build_mesh(p.geometry, spec);
    const ValidationReport report = validate_mesh(m);
    json j = json::parse(mesh_to_json(m));
    j["provenance"] = {{"config_hash", hex(config_hash(o, p))}, {"seed", o.seed}, {"preset", p.name},
                       {"role", o.generation ? "generation" : "inverse"}};
    write_text(o.out, j.dump() + "\n");
    std::printf("%zu nodes, %zu elements, %zu electrode patches, id %s\n", m.node_count(), m.element_count(),
                m.electrodes.size(), hex(m.id()).c_str());
    if (!report.ok()) {
        std::fprintf(stderr, "mesh validation failed:\n%s\n", report.summary().c_str());
        return kSolver;
    }
    std::printf("validation: ok\n");
    return kOk;
}

int cmd_dataset(const Options& o) {
    require(o.out, "--out");
    const Preset p = make_preset(o);
    std::vector<double> fixed;
    std::size_t count = o.count ? o.count : p.train_count;
    if (!o.distances.empty()) {
        std::size_t n = 0;
        fixed = suite_distances(o, n);
        if (!o.count) count = n;
    }
    const Workspace ws = open_workspace(o, p, true);
    const auto cfg = dataset_config(o, p, count, o.seed, fixed, o.noise);
    const auto t0 = std::chrono::steady_clock::now();
    const Dataset ds = gen_dataset(cfg, ws.generation, ws.inverse, ws.pattern, ws.schedule, ws.r);
    save_dataset(ds, o.out);
    std::printf("%zu samples in %.1f s -> %s (config_hash %s, seed %llu)\n", ds.samples.size(), seconds_since(t0),
                o.out.c_str(), hex(cfg.hash()).c_str(), static_cast<unsigned long long>(o.seed));
    return kOk;
}

int cmd_train(const Options& o) {
    require(o.dataset, "--dataset");
    require(o.out, "--out");
    const Preset p = make_preset(o);
    const RbfMode mode = rbf_mode_from_string(o.mode);
    const Dataset ds = load_dataset(o.dataset);
    if (ds.config.noise.enabled()) log("warning: training on a noisy dataset");
    const auto t0 = std::chrono::steady_clock::now();
    const TrainResult res = mode == RbfMode::PostProc ? train_postproc(ds, p.train, ds.schedule_id)
                                                      : train_direct(ds, p.train);
    save_model(res.model, o.out);
    std::printf("round,spread,ridge,train_mse,val_mse\n");
    for (std::size_t i = 0; i < res.trace.rounds.size(); ++i) {
        const auto& r = res.trace.rounds[i];
        std::printf("%zu,%.9g,%.9g,%.9g,%.9g%s\n", i, r.spread, r.ridge, r.train_mse, r.val_mse,
                    i == res.trace.best ? ",best" : "");
    }
    std::printf("%s model, %lld hidden units, trained in %.1f s -> %s (config_hash %s, seed %llu)\n",
                to_string(mode).c_str(), static_cast<long long>(res.model.hidden_count()), seconds_since(t0),
                o.out.c_str(), hex(res.model.config_hash).c_str(), static_cast<unsigned long long>(o.seed));
    return kOk;
}

int cmd_reconstruct(const Options& o) {
    require(o.out, "--out");
    const Preset p = make_preset(o);
    const Method method = method_from_string(o.method);
    const bool gn = method == Method::Gn || method == Method::GnAnn;
    const Workspace ws = open_workspace(o, p, gn);

    Dataset ds;
    std::string case_id = "input";
    if (!o.dataset.empty()) {
        ds = load_dataset(o.dataset);
        check_dataset(ds, ws, false);
        if (o.case_index < 0 || std::size_t(o.case_index) >= ds.samples.size())
            throw ConfigError("--case must index a sample of the dataset");
        ds.samples = {ds.samples[std::size_t(o.case_index)]};
        char id[32];
        std::snprintf(id, sizeof id, "case%04ld", o.case_index);
        case_id = id;
    } else {
        require(o.frame, "--frame or --dataset");
        require(o.ref, "--ref");
        Sample s;
        s.v_noisy = load_frame_csv(o.frame, ws.schedule);
        s.v_clean = s.v_noisy;
        ds.v_ref = load_frame_csv(o.ref, ws.schedule);
        ds.samples.push_back(std::move(s));
        ds.inverse_mesh_id = ws.inverse.id();
        ds.schedule_id = ws.schedule.id();
    }

    Models models;
    if (method == Method::GnAnn || method == Method::AnnDirect) {
        require(o.model, "--model");
        RbfModel m = load_model(o.model);
        check_model(m, method == Method::GnAnn ? RbfMode::PostProc : RbfMode::Direct, ws, o.model);
        (method == Method::GnAnn ? models.postproc : models.direct) = std::move(m);
    }
    std::optional<PdipmSolver> pdipm;
    if (method == Method::Pdipm) pdipm.emplace(ws.inverse, ws.jacobian, p.pdipm);

    const auto t0 = std::chrono::steady_clock::now();
    NodalImage img;
    const VoltageFrame dv = frame_difference(ds.samples[0].v_noisy, ds.v_ref);
    try {
        if (method == Method::Pdipm) {
            PdipmResult res;
            try {
                res = pdipm->solve(dv);
            } catch (const LineSearchError& e) {
                log(std::string("warning: ") + e.what() + "; keeping the best iterate");
                res = e.best();
            }
            img = res.image;
            if (!o.trace.empty()) write_file(o.trace, [&](std::ostream& os) { write_trace_csv(os, res.trace); });
        } else {
            img = reconstruct_sample(method, ds.samples[0], ds, ws, models, nullptr);
        }
    } catch (const SolverError& e) {
        throw SolverError(case_id + " (" + to_string(method) + "): " + e.what());
    }
    const double apply = seconds_since(t0);
    write_file(o.out, [&](std::ostream& os) {
        write_nodal_image_vtk(os, ws.inverse, img, provenance_line(o, p) + " method=" + to_string(method) + " case=" + case_id);
    });
    std::printf("%s %s: apply %.4f s -> %s\n", case_id.c_str(), to_string(method).c_str(), apply, o.out.c_str());
    return kOk;
}

void write_reports(const fs::path& path, const std::vector<ErrorReport>& reports, const std::string& provenance) {
    write_file(path, [&](std::ostream& os) {
        os << "# " << provenance << '\n';
        write_report_csv(os, reports);
    });
}

Models load_models(const Options& o, const std::vector<Method>& methods, const Workspace& ws) {
    Models models;
    if (has(methods, Method::GnAnn)) {
        const std::string path = !o.model_postproc.empty() ? o.model_postproc : o.model;
        require(path, "--model-postproc");
        models.postproc = load_model(path);
        check_model(*models.postproc, RbfMode::PostProc, ws, path);
    }
    if (has(methods, Method::AnnDirect)) {
        const std::string path = !o.model_direct.empty() ? o.model_direct : o.model;
        require(path, "--model-direct");
        models.direct = load_model(path);
        check_model(*models.direct, RbfMode::Direct, ws, path);
    }
    return models;
}

int cmd_eval(const Options& o) {
    require(o.dataset, "--dataset");
    require(o.out, "--out");
    const Preset p = make_preset(o);
    const auto methods = parse_methods(o.methods);
    const Dataset ds = load_dataset(o.dataset);
    const Workspace ws = open_workspace(o, p, needs_gn(methods));
    check_dataset(ds, ws, needs_gn(methods));
    const Models models = load_models(o, methods, ws);
    std::optional<PdipmSolver> pdipm;
    if (has(methods, Method::Pdipm)) pdipm.emplace(ws.inverse, ws.jacobian, p.pdipm);
    const SweepResult res = run_sweep(ds, ws, models, methods, pdipm ? &*pdipm : nullptr);
    write_reports(o.out, res.reports, provenance_line(o, p));
    for (const auto& [m, by] : mean_nade(res.reports)) {
        std::printf("%-10s", m.c_str());
        for (const auto& [d, v] : by) std::printf("  d=%g nade=%.4f", d, v);
        std::printf("\n");
    }
    return kOk;
}

int cmd_sweep(const Options& o) {
    require(o.out, "--out");
    const Preset p = make_preset(o);
    const auto methods = parse_methods(o.methods);
    std::size_t suite_count = 0;
    const auto distances = suite_distances(o, suite_count);
    const fs::path out = o.out;
    fs::create_directories(out);
    const std::string prov = provenance_line(o, p);

    std::map<std::string, double> build;
    auto t0 = std::chrono::steady_clock::now();
    const Workspace ws = open_workspace(o, p, true);
    build["workspace"] = seconds_since(t0);

    Models models;
    if (has(methods, Method::GnAnn) || has(methods, Method::AnnDirect)) {
        const std::size_t n = o.train_count ? o.train_count : p.train_count;
        t0 = std::chrono::steady_clock::now();
        const Dataset train = gen_dataset(dataset_config(o, p, n, o.seed, {}, false), ws.generation, ws.inverse,
                                          ws.pattern, ws.schedule, ws.r);
        build["training set"] = seconds_since(t0);
        log("training set: " + std::to_string(n) + " samples");
        t0 = std::chrono::steady_clock::now();
        if (has(methods, Method::GnAnn)) models.postproc = train_postproc(train, p.train, ws.schedule.id()).model;
        if (has(methods, Method::AnnDirect)) models.direct = train_direct(train, p.train).model;
        build["training"] = seconds_since(t0);
    }

    t0 = std::chrono::steady_clock::now();
    const Dataset suite = gen_dataset(dataset_config(o, p, suite_count, o.seed + 1, distances, o.noise), ws.generation,
                                      ws.inverse, ws.pattern, ws.schedule, ws.r);
    build["test suite"] = seconds_since(t0);

    std::optional<PdipmSolver> pdipm;
    if (has(methods, Method::Pdipm)) {
        t0 = std::chrono::steady_clock::now();
        pdipm.emplace(ws.inverse, ws.jacobian, p.pdipm);
        build["pdipm setup"] = seconds_since(t0);
    }

    SweepResult res;
    const VoxelMap map(ws.inverse, p.grid.geometry());
    for (Method m : methods) {
        log("sweeping " + to_string(m));
        SweepResult one = run_sweep(suite, ws, models, {m}, pdipm ? &*pdipm : nullptr);
        res.seconds.insert(one.seconds.begin(), one.seconds.end());
        res.failures.insert(one.failures.begin(), one.failures.end());
        res.reports.insert(res.reports.end(), one.reports.begin(), one.reports.end());
        res.images.insert(res.images.end(), one.images.begin(), one.images.end());
    }

    write_reports(out / "report.csv", res.reports, prov);

    // Method x distance means per metric.
    write_file(out / "summary.csv", [&](std::ostream& os) {
        os << "# " << prov << '\n' << "metric,method,distance,mean,cases\n" << std::setprecision(10);
        struct Acc {
            double nade = 0, res = 0, sd = 0;
            int n = 0;
        };
        std::map<std::string, std::map<double, Acc>> acc;
        for (const auto& r : res.reports) {
            auto& a = acc[r.method][std::round(r.distance * 1e6) / 1e6];
            a.nade += r.nade;
            a.res += r.delta_res;
            a.sd += r.sd;
            ++a.n;
        }
        for (const char* metric : {"nade", "delta_res_pct", "sd_pct"})
            for (Method m : methods)
                for (const auto& [d, a] : acc[to_string(m)]) {
                    const double v = std::string(metric) == "nade" ? a.nade : std::string(metric) == "sd_pct" ? a.sd : a.res;
                    os << metric << ',' << to_string(m) << ',' << d << ',' << v / a.n << ',' << a.n << '\n';
                }
    });

    // Wall-clock is not reproducible, so the timing table is plain text.
    std::ostringstream tt;
    tt << "# " << prov << '\n';
    tt << std::left << std::setw(14) << "method" << std::setw(18) << "apply_s_per_case" << "degenerate\n";
    for (Method m : methods) {
        const auto name = to_string(m);
        tt << std::left << std::setw(14) << name << std::setw(18) << std::setprecision(6) << res.seconds[name]
           << res.failures[name] << '\n';
    }
    tt << "\n" << std::left << std::setw(14) << "build phase" << "seconds\n";
    for (const auto& [phase, s] : build) tt << std::left << std::setw(14) << phase << std::setprecision(6) << s << '\n';
    // Best effort; Linux reports kilobytes.
    rusage ru{};
    if (getrusage(RUSAGE_SELF, &ru) == 0) tt << "\npeak_rss_mb   " << std::setprecision(6) << ru.ru_maxrss / 1024.0 << '\n';
    write_text(out / "timing.txt", tt.str());
    std::printf("%s", tt.str().c_str());

    if (o.images) {
        const fs::path dir = out / "images";
        fs::create_directories(dir);
        for (std::size_t k = 0; k < res.reports.size(); ++k) {
            const auto& r = res.reports[k];
            const BinaryVolume vol = threshold_quarter(map.interpolate(res.images[k].values));
            write_file(dir / (r.case_id + "_" + r.method + ".vtk"), [&](std::ostream& os) {
                write_binary_volume_vtk(os, vol, prov + " method=" + r.method + " case=" + r.case_id);
            });
        }
    }
    return kOk;
}

int cmd_export(const Options& o) {
    require(o.input, "--input");
    require(o.out, "--out");
    const Preset p = make_preset(o);
    std::optional<Mesh> mesh;
    if (!o.mesh.empty()) mesh = load_mesh(o.mesh);
    else mesh = build_mesh(p.geometry, p.inverse);
    NodalImage img{load_f64(o.input), mesh->id()};
    if (std::size_t(img.values.size()) != mesh->node_count())
        throw DimensionError(o.input + " has " + std::to_string(img.values.size()) + " values, mesh has " +
                             std::to_string(mesh->node_count()) + " nodes");
    const VoxelMap map(*mesh, p.grid.geometry());
    const BinaryVolume vol = threshold_quarter(map.interpolate(img.values));
    write_file(o.out, [&](std::ostream& os) { write_binary_volume_vtk(os, vol, provenance_line(o, p) + " input=" + o.input); });
    std::printf("%zu voxels set -> %s\n", vol.count(), o.out.c_str());
    return kOk;
}

int run(CLI::App& app, const std::function<int()>& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kConfig;
    } catch (const ProvenanceError& e) {
        std::fprintf(stderr, "provenance error: %s\n", e.what());
        return kProvenance;
    } catch (const GeometryError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kConfig;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kConfig;
    } catch (const DimensionError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kConfig;
    } catch (const Error& e) {
        std::fprintf(stderr, "solver error: %s\n", e.what());
        return kSolver;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kSolver;
    }
    (void)app;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Open-domain EIT simulation and reconstruction"};
    app.require_subcommand(1);
    Options o;
    app.add_option("--seed", o.seed, "master seed");
    app.add_option("--preset", o.preset, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
    app.add_option("--threads", o.threads, "worker threads");
    app.add_option("--config", o.config, "JSON file; its keys override flags");

    auto geometry = [&](CLI::App* c) {
        c->add_option("--electrode-arc", o.electrode_arc);
        c->add_option("--electrode-height", o.electrode_height);
        c->add_option("--layer-pitch", o.layer_pitch);
        c->add_option("--probe-radius", o.probe_radius);
        c->add_option("--tank-radius", o.tank_radius);
        c->add_option("--near-edge", o.near_edge);
        c->add_option("--far-edge", o.far_edge);
    };
    auto solver = [&](CLI::App* c) {
        c->add_option("--mesh", o.mesh, "inverse mesh file");
        c->add_option("--matrix", o.matrix, "GN matrix cache (read if present, written otherwise)");
        c->add_option("--lambda", o.lambda, "GN regularisation");
        c->add_option("--alpha", o.alpha, "PDIPM TV weight");
    };
    auto noise = [&](CLI::App* c) {
        c->add_flag("--noise", o.noise, "add distance-dependent noise");
        c->add_option("--snr-near", o.snr_near);
        c->add_option("--snr-far", o.snr_far);
    };

    auto* mesh = app.add_subcommand("mesh", "build and validate a mesh");
    mesh->add_option("--out", o.out);
    mesh->add_flag("--generation", o.generation, "build the finer data-generation mesh");
    geometry(mesh);

    auto* dataset = app.add_subcommand("dataset", "generate a dataset");
    dataset->add_option("--out", o.out);
    dataset->add_option("--count", o.count);
    dataset->add_option("--distances", o.distances, "fixed distances, cycled over samples");
    dataset->add_option("--cases-per-distance", o.cases_per_distance);
    dataset->add_option("--min-distance", o.min_distance);
    dataset->add_option("--max-distance", o.max_distance);
    noise(dataset);
    solver(dataset);
    geometry(dataset);

    auto* train = app.add_subcommand("train", "train an RBF model on a dataset");
    train->add_option("--dataset", o.dataset);
    train->add_option("--out", o.out);
    train->add_option("--mode", o.mode, "postproc or direct")->check(CLI::IsMember({"postproc", "direct"}));
    train->add_option("--hidden", o.hidden);

    auto* recon = app.add_subcommand("reconstruct", "reconstruct one frame");
    recon->add_option("--method", o.method, "gn, pdipm, ann-direct or gn-ann");
    recon->add_option("--dataset", o.dataset);
    recon->add_option("--case", o.case_index, "sample index within --dataset");
    recon->add_option("--frame", o.frame, "measured frame CSV");
    recon->add_option("--ref", o.ref, "reference frame CSV");
    recon->add_option("--model", o.model);
    recon->add_option("--trace", o.trace, "PDIPM convergence trace CSV");
    recon->add_option("--out", o.out, "VTK image");
    solver(recon);
    geometry(recon);

    auto* eval = app.add_subcommand("eval", "score methods on a dataset");
    eval->add_option("--dataset", o.dataset);
    eval->add_option("--methods", o.methods);
    eval->add_option("--model-postproc", o.model_postproc);
    eval->add_option("--model-direct", o.model_direct);
    eval->add_option("--out", o.out, "report CSV");
    solver(eval);
    geometry(eval);

    auto* sweep = app.add_subcommand("sweep", "train, reconstruct and score over a distance grid");
    sweep->add_option("--distances", o.distances);
    sweep->add_option("--methods", o.methods);
    sweep->add_option("--cases-per-distance", o.cases_per_distance);
    sweep->add_option("--train-count", o.train_count);
    sweep->add_option("--hidden", o.hidden);
    sweep->add_option("--out", o.out, "output directory");
    sweep->add_flag("!--no-images", o.images, "skip per-case image exports");
    noise(sweep);
    solver(sweep);
    geometry(sweep);

    auto* exp = app.add_subcommand("export", "threshold a nodal image and write it as VTK");
    exp->add_option("--input", o.input, "raw float64 nodal image");
    exp->add_option("--mesh", o.mesh);
    exp->add_option("--out", o.out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    return run(app, [&]() -> int {
        if (!o.config.empty()) apply_config_file(o, o.config);
        if (mesh->parsed()) return cmd_mesh(o);
        if (dataset->parsed()) return cmd_dataset(o);
        if (train->parsed()) return cmd_train(o);
        if (recon->parsed()) return cmd_reconstruct(o);
        if (eval->parsed()) return cmd_eval(o);
        if (sweep->parsed()) return cmd_sweep(o);
        if (exp->parsed()) return cmd_export(o);
        throw ConfigError("no subcommand");
    });
}
