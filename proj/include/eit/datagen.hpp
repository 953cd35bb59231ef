#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "eit/fem.hpp"
#include "eit/mesh.hpp"
#include "eit/recon_linear.hpp"

namespace eit {

using Rng = std::mt19937_64;

/// Where random targets may be placed.
struct TargetBounds {
    double min_distance = 0.0;   // edge-to-edge, probe radii
    double max_distance = 10.0;
    Vec3 semi_axes = Vec3(4.0, 6.0, 9.0);
    double z_half_range = 1.6;   // target centre height, around the electrode band
    double sigma_in = 0.3;
    double sigma_bg = 0.15;
    double probe_radius = 1.0;
};

/// Edge-to-edge distance between the ellipsoid and the probe cylinder
/// (infinite along z). Negative when they overlap.
double probe_distance(const TargetSpec& target, double probe_radius = 1.0);

/// Uniform azimuth, uniform distance in [min, max], uniform rotation.
TargetSpec sample_target(Rng& rng, const TargetBounds& bounds);

/// Places a target with a given rotation and azimuth at an exact distance.
TargetSpec place_target(const Eigen::Matrix3d& rotation, double azimuth, double z, double distance,
                        const TargetBounds& bounds);

ConductivityField rasterize_target(const Mesh& mesh, const TargetSpec& target);

/// Conductivity change image (target minus background) per element.
Eigen::VectorXd target_contrast(const Mesh& mesh, const TargetSpec& target);

/// Distance-dependent white Gaussian noise. The SNR is linear in dB over the
/// normalised drive-to-measurement separation.
struct NoiseModel {
    double snr_near_db = 50.0;
    double snr_far_db = 10.0;

    static NoiseModel off();
    bool enabled() const { return std::isfinite(snr_near_db) || std::isfinite(snr_far_db); }
    void check() const;
};

/// Normalised separation in [0, 1] for every retained measurement.
Eigen::VectorXd measurement_separation(const TankGeometry& geom, const MeasurementSchedule& schedule);

/// Target SNR (dB) for every retained measurement.
Eigen::VectorXd measurement_snr_db(const TankGeometry& geom, const MeasurementSchedule& schedule, const NoiseModel& nm);

VoltageFrame add_noise(const VoltageFrame& frame, const TankGeometry& geom, const MeasurementSchedule& schedule,
                       const NoiseModel& nm, Rng& rng);

struct Sample {
    TargetSpec target;
    double distance = 0.0;
    ConductivityField sigma;  // generation mesh
    VoltageFrame v_clean;
    VoltageFrame v_noisy;
    NodalImage gn_image;      // inverse mesh
    NodalImage truth_nodal;   // inverse mesh
};

struct DatasetConfig {
    std::size_t count = 300;
    std::uint64_t seed = 1;
    TargetBounds bounds;
    NoiseModel noise = NoiseModel::off();
    double contact_impedance = 0.01;
    /// Skips the inverse-crime guard when generation and inverse mesh coincide.
    bool allow_inverse_crime = false;
    int threads = 1;
    /// Optional fixed distances, cycled over samples (evaluation suites).
    std::vector<double> fixed_distances;

    /// Hash of everything that shapes the samples (not the thread count).
    std::uint64_t hash() const;
};

struct Dataset {
    std::vector<Sample> samples;
    VoltageFrame v_ref;  // homogeneous frame on the generation mesh
    std::uint64_t generation_mesh_id = 0;
    std::uint64_t inverse_mesh_id = 0;
    std::uint64_t schedule_id = 0;
    std::uint64_t gn_config_hash = 0;
    DatasetConfig config;
};

/// Deterministic per-sample seed.
std::uint64_t sample_seed(std::uint64_t master, std::size_t index);

/// Draw -> rasterise -> forward solve -> noise -> GN on the inverse mesh.
Dataset gen_dataset(const DatasetConfig& cfg, const Mesh& generation, const Mesh& inverse, const StimPattern& pattern,
                    const MeasurementSchedule& schedule, const ReconstructionMatrix& r);

/// Regenerates the noisy frame and GN image of every sample with a new noise model.
Dataset renoise_dataset(const Dataset& clean, const NoiseModel& nm, std::uint64_t seed, const Mesh& generation,
                        const Mesh& inverse, const MeasurementSchedule& schedule, const ReconstructionMatrix& r);

void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace eit
