#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "eit/datagen.hpp"
#include "eit/fem.hpp"
#include "eit/mesh.hpp"
#include "eit/metrics.hpp"
#include "eit/rbf.hpp"
#include "eit/recon_linear.hpp"
#include "eit/recon_pdipm.hpp"

namespace eit {

enum class Method { Gn, Pdipm, AnnDirect, GnAnn };

std::string to_string(Method m);
Method method_from_string(const std::string& s);
std::vector<Method> parse_methods(const std::string& csv);

/// Named bundle of default dimensions and frozen solver settings.
struct Preset {
    std::string name = "desk";
    TankGeometry geometry;
    RefinementSpec inverse;
    RefinementSpec generation;
    std::size_t train_count = 300;
    TrainConfig train;
    GnConfig gn;
    PdipmConfig pdipm;
    GridSpec grid;
    TargetBounds bounds;
    NoiseModel noise;  // used when noise is switched on

    static Preset named(const std::string& name);
};

/// Meshes, schedule and linearisation shared by every method.
struct Workspace {
    Preset preset;
    Mesh inverse;
    Mesh generation;
    StimPattern pattern;
    MeasurementSchedule schedule;
    Jacobian jacobian;
    ReconstructionMatrix r;

    /// Builds everything except R unless `with_matrix`. A given inverse mesh
    /// replaces the preset one.
    static Workspace build(const Preset& preset, bool with_matrix = true, const Mesh* inverse = nullptr);
};

struct Models {
    std::optional<RbfModel> postproc;
    std::optional<RbfModel> direct;
};

Eigen::MatrixXd postproc_inputs(const Dataset& ds);
Eigen::MatrixXd direct_inputs(const Dataset& ds);
Eigen::MatrixXd truth_targets(const Dataset& ds);

TrainResult train_postproc(const Dataset& ds, const TrainConfig& cfg, std::uint64_t schedule_id);
TrainResult train_direct(const Dataset& ds, const TrainConfig& cfg);

/// Reconstructs one sample with one method. `pdipm` is required for PDIPM.
NodalImage reconstruct_sample(Method method, const Sample& s, const Dataset& ds, const Workspace& ws,
                              const Models& models, const PdipmSolver* pdipm);

struct SweepResult {
    std::vector<ErrorReport> reports;
    std::vector<NodalImage> images;  // parallel to reports
    /// Mean apply-phase wall-clock seconds per method.
    std::map<std::string, double> seconds;
    std::map<std::string, std::size_t> failures;
};

/// Runs every method on every sample. Solver failures are reported with the
/// case id; a PDIPM line-search failure keeps the best iterate.
SweepResult run_sweep(const Dataset& suite, const Workspace& ws, const Models& models,
                      const std::vector<Method>& methods, const PdipmSolver* pdipm);

/// Mean NADE per (method, distance).
std::map<std::string, std::map<double, double>> mean_nade(const std::vector<ErrorReport>& reports);

/// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace eit
