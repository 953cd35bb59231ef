#include "eit/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <thread>

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <json.hpp>

#include "eit/errors.hpp"
#include "eit/hash.hpp"
#include "eit/io.hpp"

namespace eit {

namespace {

constexpr double kPi = std::numbers::pi;

// Root of sum((r_i z_i / (s + r_i))^2) - 1 for the closest point on an
// ellipse (D. Eberly, "Distance from a point to an ellipse").
double ellipse_root(double r0, double z0, double z1, double g) {
    const double n0 = r0 * z0;
    double s0 = z1 - 1.0;
    double s1 = g < 0 ? 0.0 : std::hypot(n0, z1) - 1.0;
    double s = 0.0;
    for (int i = 0; i < 200; ++i) {
        s = 0.5 * (s0 + s1);
        if (s == s0 || s == s1) break;
        const double a = n0 / (s + r0), b = z1 / (s + 1.0);
        const double gs = a * a + b * b - 1.0;
        if (gs > 0) s0 = s;
        else if (gs < 0) s1 = s;
        else break;
    }
    return s;
}

// Distance from (y0, y1), both >= 0, to the ellipse with semi-axes e0 >= e1.
double ellipse_distance(double e0, double e1, double y0, double y1) {
    if (y1 > 0) {
        if (y0 > 0) {
            const double z0 = y0 / e0, z1 = y1 / e1;
            const double g = z0 * z0 + z1 * z1 - 1.0;
            if (g == 0) return 0.0;
            const double r0 = (e0 / e1) * (e0 / e1);
            const double s = ellipse_root(r0, z0, z1, g);
            const double x0 = r0 * y0 / (s + r0), x1 = y1 / (s + 1.0);
            return std::hypot(x0 - y0, x1 - y1);
        }
        return std::abs(y1 - e1);
    }
    const double numer = e0 * y0, denom = e0 * e0 - e1 * e1;
    if (numer < denom) {
        const double xde = numer / denom;
        const double x0 = e0 * xde, x1 = e1 * std::sqrt(std::max(0.0, 1.0 - xde * xde));
        return std::hypot(x0 - y0, x1);
    }
    return std::abs(y0 - e0);
}

}  // namespace

double probe_distance(const TargetSpec& t, double probe_radius) {
    // Shadow of the ellipsoid on the xy plane: (q - c)^T S^-1 (q - c) <= 1
    // with S the xy block of R diag(a^2) R^T.
    const Eigen::Matrix3d a = t.rotation * t.semi_axes.cwiseProduct(t.semi_axes).asDiagonal() * t.rotation.transpose();
    const Eigen::Matrix2d s = a.topLeftCorner<2, 2>();
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(s);
    const Eigen::Vector2d ev = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();  // ascending
    const Eigen::Vector2d local = eig.eigenvectors().transpose() * (-t.center.head<2>());
    const double e0 = ev[1], e1 = ev[0];
    const double y0 = std::abs(local[1]), y1 = std::abs(local[0]);
    const double d = ellipse_distance(e0, e1, y0, y1);
    const bool inside = (y0 / e0) * (y0 / e0) + (y1 / e1) * (y1 / e1) <= 1.0;
    return (inside ? -d : d) - probe_radius;
}

TargetSpec place_target(const Eigen::Matrix3d& rotation, double azimuth, double z, double distance,
                        const TargetBounds& bounds) {
    TargetSpec t;
    t.semi_axes = bounds.semi_axes;
    t.rotation = rotation;
    t.sigma_in = bounds.sigma_in;
    t.sigma_bg = bounds.sigma_bg;
    const Vec3 dir(std::cos(azimuth), std::sin(azimuth), 0.0);
    auto f = [&](double rho) {
        t.center = rho * dir + Vec3(0, 0, z);
        return probe_distance(t, bounds.probe_radius) - distance;
    };
    // Distance grows monotonically with rho once the axis is outside the shadow.
    double lo = 0.0, hi = bounds.probe_radius + distance + 2.0 * bounds.semi_axes.maxCoeff();
    while (f(hi) < 0) hi *= 2.0;
    for (int i = 0; i < 200 && hi - lo > 1e-12 * hi; ++i) {
        const double mid = 0.5 * (lo + hi);
        (f(mid) < 0 ? lo : hi) = mid;
    }
    f(hi);
    return t;
}

TargetSpec sample_target(Rng& rng, const TargetBounds& bounds) {
    if (!(bounds.max_distance > 0)) throw DimensionError("max_distance must be positive");
    if (bounds.min_distance < 0 || bounds.min_distance > bounds.max_distance)
        throw DimensionError("min_distance must lie in [0, max_distance]");
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    // Uniform rotation from a uniform unit quaternion.
    const double u1 = u01(rng), u2 = u01(rng), u3 = u01(rng);
    const Eigen::Quaterniond q(std::sqrt(u1) * std::cos(2 * kPi * u3), std::sqrt(1 - u1) * std::sin(2 * kPi * u2),
                               std::sqrt(1 - u1) * std::cos(2 * kPi * u2), std::sqrt(u1) * std::sin(2 * kPi * u3));
    const double azimuth = 2 * kPi * u01(rng);
    const double z = bounds.z_half_range * (2.0 * u01(rng) - 1.0);
    const double d = bounds.min_distance + (bounds.max_distance - bounds.min_distance) * u01(rng);
    return place_target(q.normalized().toRotationMatrix(), azimuth, z, d, bounds);
}

ConductivityField rasterize_target(const Mesh& mesh, const TargetSpec& target) {
    auto f = ConductivityField::uniform(mesh, target.sigma_bg);
    for (std::size_t e : elements_in_ellipsoid(mesh, target)) f.sigma[Eigen::Index(e)] = target.sigma_in;
    return f;
}

Eigen::VectorXd target_contrast(const Mesh& mesh, const TargetSpec& target) {
    Eigen::VectorXd c = Eigen::VectorXd::Zero(Eigen::Index(mesh.element_count()));
    for (std::size_t e : elements_in_ellipsoid(mesh, target)) c[Eigen::Index(e)] = target.sigma_in - target.sigma_bg;
    return c;
}

NoiseModel NoiseModel::off() {
    const double inf = std::numeric_limits<double>::infinity();
    return {inf, inf};
}

void NoiseModel::check() const {
    if (!enabled()) return;
    if (!std::isfinite(snr_near_db) || !std::isfinite(snr_far_db))
        throw DimensionError("noise SNR endpoints must both be finite or both disabled");
    if (!(snr_near_db > snr_far_db)) throw DimensionError("snr_near_db must exceed snr_far_db");
}

Eigen::VectorXd measurement_separation(const TankGeometry& geom, const MeasurementSchedule& schedule) {
    const int per = geom.electrodes_per_layer;
    const StimPattern pattern = StimPattern::adjacent(geom);
    auto midpoint = [&](int a, int b) {
        const double ta = geom.electrode_angle(a % per), tb = geom.electrode_angle(b % per);
        return std::atan2(std::sin(ta) + std::sin(tb), std::cos(ta) + std::cos(tb));
    };
    auto layer_mid = [&](int a, int b) { return 0.5 * double(a / per + b / per); };
    const auto rows = schedule.retained();
    if (pattern.injections.size() != schedule.per_injection.size())
        throw DimensionError("schedule does not match the adjacent stimulation pattern");
    Eigen::VectorXd s(Eigen::Index(rows.size()));
    const double layer_span = std::max(1, geom.layers - 1);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto [src, snk] = pattern.injections[std::size_t(rows[i].injection)];
        double dtheta = std::abs(midpoint(src, snk) - midpoint(rows[i].plus, rows[i].minus));
        dtheta = std::min(dtheta, 2 * kPi - dtheta);
        const double dlayer = std::abs(layer_mid(src, snk) - layer_mid(rows[i].plus, rows[i].minus));
        s[Eigen::Index(i)] = std::max(dtheta / kPi, dlayer / layer_span);
    }
    const double lo = s.minCoeff(), hi = s.maxCoeff();
    if (hi > lo) s = (s.array() - lo) / (hi - lo);
    else s.setZero();
    return s;
}

Eigen::VectorXd measurement_snr_db(const TankGeometry& geom, const MeasurementSchedule& schedule, const NoiseModel& nm) {
    nm.check();
    const Eigen::VectorXd s = measurement_separation(geom, schedule);
    if (!nm.enabled()) return Eigen::VectorXd::Constant(s.size(), std::numeric_limits<double>::infinity());
    return (nm.snr_near_db + (nm.snr_far_db - nm.snr_near_db) * s.array()).matrix();
}

VoltageFrame add_noise(const VoltageFrame& frame, const TankGeometry& geom, const MeasurementSchedule& schedule,
                       const NoiseModel& nm, Rng& rng) {
    if (!nm.enabled()) return frame;
    const Eigen::VectorXd snr = measurement_snr_db(geom, schedule, nm);
    if (snr.size() != frame.values.size()) throw DimensionError("frame length does not match the schedule");
    VoltageFrame out = frame;
    std::normal_distribution<double> n01(0.0, 1.0);
    for (Eigen::Index m = 0; m < snr.size(); ++m)
        out.values[m] += std::abs(frame.values[m]) * std::pow(10.0, -snr[m] / 20.0) * n01(rng);
    return out;
}

std::uint64_t DatasetConfig::hash() const {
    Fnv1a h;
    h.add(std::uint64_t(count)).add(seed);
    h.add(bounds.min_distance).add(bounds.max_distance).add(bounds.z_half_range);
    for (int a = 0; a < 3; ++a) h.add(bounds.semi_axes[a]);
    h.add(bounds.sigma_in).add(bounds.sigma_bg).add(bounds.probe_radius);
    h.add(noise.snr_near_db).add(noise.snr_far_db).add(contact_impedance).add(std::uint8_t(allow_inverse_crime));
    for (double d : fixed_distances) h.add(d);
    return h.value();
}

std::uint64_t sample_seed(std::uint64_t master, std::size_t index) {
    return master ^ std::uint64_t(index);
}

namespace {

// Distinct stream for the noise of a sample, so re-noising keeps targets.
std::uint64_t noise_seed(std::uint64_t seed) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

template <class F>
void parallel_for(std::size_t n, int threads, F&& body) {
    const std::size_t t = std::clamp<std::size_t>(std::size_t(std::max(1, threads)), 1, std::max<std::size_t>(1, n));
    if (t == 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::exception_ptr> errors(t);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < t; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += t) body(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

void check_meshes(const Mesh& generation, const Mesh& inverse, bool allow) {
    if (!allow && generation.id() == inverse.id())
        throw ProvenanceError("generation and inverse meshes are identical (inverse crime); pass the override to allow");
}

}  // namespace

Dataset gen_dataset(const DatasetConfig& cfg, const Mesh& generation, const Mesh& inverse, const StimPattern& pattern,
                    const MeasurementSchedule& schedule, const ReconstructionMatrix& r) {
    check_meshes(generation, inverse, cfg.allow_inverse_crime);
    cfg.noise.check();
    if (r.mesh_id != inverse.id()) throw ProvenanceError("reconstruction matrix belongs to a different mesh");

    Dataset ds;
    ds.config = cfg;
    ds.generation_mesh_id = generation.id();
    ds.inverse_mesh_id = inverse.id();
    ds.schedule_id = schedule.id();
    ds.gn_config_hash = r.config_hash;
    const auto bg = ConductivityField::uniform(generation, cfg.bounds.sigma_bg);
    ds.v_ref = solve_forward(assemble_system(generation, bg, cfg.contact_impedance), pattern, schedule);

    const auto averaging = nodal_averaging(inverse);
    ds.samples.resize(cfg.count);
    parallel_for(cfg.count, cfg.threads, [&](std::size_t i) {
        Rng rng(sample_seed(cfg.seed, i));
        TargetBounds b = cfg.bounds;
        if (!cfg.fixed_distances.empty()) {
            b.min_distance = b.max_distance = cfg.fixed_distances[i % cfg.fixed_distances.size()];
            b.max_distance = std::max(b.max_distance, 1e-12);
        }
        Sample s;
        s.target = sample_target(rng, b);
        s.distance = probe_distance(s.target, b.probe_radius);
        try {
            s.sigma = rasterize_target(generation, s.target);
            s.v_clean = solve_forward(assemble_system(generation, s.sigma, cfg.contact_impedance), pattern, schedule);
        } catch (const Error& e) {
            throw SolverError("sample " + std::to_string(i) + ": " + e.what());
        }
        Rng noise_rng(noise_seed(sample_seed(cfg.seed, i)));
        s.v_noisy = add_noise(s.v_clean, generation.geometry, schedule, cfg.noise, noise_rng);
        s.gn_image = reconstruct_gn(r, frame_difference(s.v_noisy, ds.v_ref), inverse);
        s.truth_nodal = {averaging * target_contrast(inverse, s.target), inverse.id()};
        ds.samples[i] = std::move(s);
    });
    return ds;
}

Dataset renoise_dataset(const Dataset& clean, const NoiseModel& nm, std::uint64_t seed, const Mesh& generation,
                        const Mesh& inverse, const MeasurementSchedule& schedule, const ReconstructionMatrix& r) {
    if (clean.generation_mesh_id != generation.id() || clean.inverse_mesh_id != inverse.id())
        throw ProvenanceError("dataset was generated with different meshes");
    if (clean.schedule_id != schedule.id()) throw ProvenanceError("dataset was generated with a different schedule");
    nm.check();
    Dataset ds = clean;
    ds.config.noise = nm;
    ds.config.seed = seed;
    ds.gn_config_hash = r.config_hash;
    parallel_for(ds.samples.size(), clean.config.threads, [&](std::size_t i) {
        Sample& s = ds.samples[i];
        Rng noise_rng(noise_seed(sample_seed(seed, i)));
        s.v_noisy = add_noise(s.v_clean, generation.geometry, schedule, nm, noise_rng);
        s.gn_image = reconstruct_gn(r, frame_difference(s.v_noisy, ds.v_ref), inverse);
    });
    return ds;
}

namespace {

using nlohmann::json;

std::string sample_dir(std::size_t i) {
    std::ostringstream ss;
    ss << "sample_" << std::setw(5) << std::setfill('0') << i;
    return ss.str();
}

json noise_json(const NoiseModel& nm) {
    if (!nm.enabled()) return {{"enabled", false}};
    return {{"enabled", true}, {"snr_near_db", nm.snr_near_db}, {"snr_far_db", nm.snr_far_db}};
}

NoiseModel noise_from(const json& j) {
    if (!j.at("enabled").get<bool>()) return NoiseModel::off();
    return {j.at("snr_near_db").get<double>(), j.at("snr_far_db").get<double>()};
}

// Rebuilds the adjacent schedule used for frame files from the stored geometry.
MeasurementSchedule schedule_for(const TankGeometry& g) {
    return MeasurementSchedule::adjacent(g, StimPattern::adjacent(g));
}

TankGeometry geometry_from_manifest(const json& j) {
    TankGeometry g;
    g.layers = j.at("layers");
    g.electrodes_per_layer = j.at("electrodes_per_layer");
    return g;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    TankGeometry g;
    const auto schedule = schedule_for(g);
    if (schedule.id() != ds.schedule_id) throw ProvenanceError("dataset schedule is not the adjacent schedule");
    const auto& c = ds.config;
    json m;
    m["format"] = "eit-dataset";
    m["version"] = 1;
    m["seed"] = c.seed;
    m["config_hash"] = c.hash();
    m["count"] = ds.samples.size();
    m["generation_mesh_id"] = ds.generation_mesh_id;
    m["inverse_mesh_id"] = ds.inverse_mesh_id;
    m["schedule_id"] = ds.schedule_id;
    m["gn_config_hash"] = ds.gn_config_hash;
    m["layers"] = g.layers;
    m["electrodes_per_layer"] = g.electrodes_per_layer;
    m["noise"] = noise_json(c.noise);
    m["contact_impedance"] = c.contact_impedance;
    m["allow_inverse_crime"] = c.allow_inverse_crime;
    m["bounds"] = {{"min_distance", c.bounds.min_distance},
                   {"max_distance", c.bounds.max_distance},
                   {"semi_axes", {c.bounds.semi_axes.x(), c.bounds.semi_axes.y(), c.bounds.semi_axes.z()}},
                   {"z_half_range", c.bounds.z_half_range},
                   {"sigma_in", c.bounds.sigma_in},
                   {"sigma_bg", c.bounds.sigma_bg},
                   {"probe_radius", c.bounds.probe_radius}};
    m["fixed_distances"] = c.fixed_distances;
    json list = json::array();
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const Sample& s = ds.samples[i];
        const auto sub = dir / sample_dir(i);
        std::filesystem::create_directories(sub);
        write_text(sub / "target.json", target_to_json(s.target));
        save_frame_csv(s.v_clean, schedule, sub / "v_clean.csv");
        save_frame_csv(s.v_noisy, schedule, sub / "v_noisy.csv");
        save_f64(s.gn_image.values, sub / "gn_image.f64");
        save_f64(s.truth_nodal.values, sub / "truth.f64");
        list.push_back({{"dir", sample_dir(i)}, {"distance", s.distance}});
    }
    m["samples"] = std::move(list);
    save_frame_csv(ds.v_ref, schedule, dir / "v_ref.csv");
    write_text(dir / "manifest.json", m.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
    json m;
    try {
        m = json::parse(read_text(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw FormatError(std::string("dataset manifest: ") + e.what());
    }
    try {
        if (m.value("format", "") != "eit-dataset") throw FormatError("not a dataset manifest");
        Dataset ds;
        auto& c = ds.config;
        c.seed = m.at("seed");
        c.count = m.at("count");
        c.noise = noise_from(m.at("noise"));
        c.contact_impedance = m.at("contact_impedance");
        c.allow_inverse_crime = m.at("allow_inverse_crime");
        const auto& b = m.at("bounds");
        c.bounds.min_distance = b.at("min_distance");
        c.bounds.max_distance = b.at("max_distance");
        for (int a = 0; a < 3; ++a) c.bounds.semi_axes[a] = b.at("semi_axes").at(a);
        c.bounds.z_half_range = b.at("z_half_range");
        c.bounds.sigma_in = b.at("sigma_in");
        c.bounds.sigma_bg = b.at("sigma_bg");
        c.bounds.probe_radius = b.at("probe_radius");
        c.fixed_distances = m.at("fixed_distances").get<std::vector<double>>();
        ds.generation_mesh_id = m.at("generation_mesh_id");
        ds.inverse_mesh_id = m.at("inverse_mesh_id");
        ds.schedule_id = m.at("schedule_id");
        ds.gn_config_hash = m.at("gn_config_hash");
        const auto schedule = schedule_for(geometry_from_manifest(m));
        if (schedule.id() != ds.schedule_id) throw ProvenanceError("dataset schedule does not match its manifest");
        ds.v_ref = load_frame_csv(dir / "v_ref.csv", schedule);
        for (const auto& entry : m.at("samples")) {
            const auto sub = dir / entry.at("dir").get<std::string>();
            Sample s;
            s.target = target_from_json(read_text(sub / "target.json"));
            s.distance = entry.at("distance");
            s.v_clean = load_frame_csv(sub / "v_clean.csv", schedule);
            s.v_noisy = load_frame_csv(sub / "v_noisy.csv", schedule);
            s.gn_image = {load_f64(sub / "gn_image.f64"), ds.inverse_mesh_id};
            s.truth_nodal = {load_f64(sub / "truth.f64"), ds.inverse_mesh_id};
            if (s.gn_image.values.size() != s.truth_nodal.values.size())
                throw DimensionError("sample " + sub.filename().string() + ": image lengths differ");
            ds.samples.push_back(std::move(s));
        }
        if (ds.samples.size() != c.count) throw FormatError("manifest count does not match the sample list");
        return ds;
    } catch (const json::exception& e) {
        throw FormatError(std::string("dataset manifest: ") + e.what());
    }
}

}  // namespace eit
