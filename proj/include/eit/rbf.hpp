#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "eit/fem.hpp"
#include "eit/recon_linear.hpp"

namespace eit {

enum class RbfMode : std::uint8_t { Direct = 0, PostProc = 1 };

std::string to_string(RbfMode m);
RbfMode rbf_mode_from_string(const std::string& s);

/// Gaussian RBF network with one hidden layer and a linear output layer.
/// Inputs are z-scored per feature, outputs min-max scaled globally.
struct RbfModel {
    RbfMode mode = RbfMode::PostProc;
    Eigen::MatrixXd centers;   // hidden x input (normalised space)
    double spread = 1.0;
    Eigen::MatrixXd weights;   // output x hidden
    Eigen::VectorXd bias;      // output
    Eigen::VectorXd in_mean, in_scale;
    double out_min = 0.0, out_scale = 1.0;
    std::uint64_t mesh_id = 0;      // inverse mesh of the output image
    std::uint64_t schedule_id = 0;  // measurement schedule
    std::uint64_t config_hash = 0;     // training settings
    std::uint64_t seed = 0;
    std::uint64_t gn_config_hash = 0;  // GN operator behind the inputs, post-processing only

    Eigen::Index input_dim() const { return centers.cols(); }
    Eigen::Index output_dim() const { return weights.rows(); }
    Eigen::Index hidden_count() const { return centers.rows(); }

    Eigen::VectorXd normalize_input(const Eigen::VectorXd& x) const;
    Eigen::VectorXd denormalize_input(const Eigen::VectorXd& z) const;
    Eigen::VectorXd denormalize_output(const Eigen::VectorXd& y) const;
    Eigen::VectorXd normalize_output(const Eigen::VectorXd& t) const;
    /// Hidden activations for a normalised input.
    Eigen::VectorXd activations(const Eigen::VectorXd& z) const;
    /// Raw forward pass, no provenance checks.
    Eigen::VectorXd evaluate(const Eigen::VectorXd& input) const;
    void check() const;
};

struct TrainConfig {
    int hidden_count = 200;
    /// Starting spread; zero uses a quarter of the median centre spacing.
    double spread = 0.0;
    double ridge = 1e-6;
    double val_fraction = 0.10;
    std::uint64_t seed = 1;
    /// Spread rounds after round 0 and early-stop patience. Each round
    /// doubles the spread and fits `ridge_steps` decades of ridge from `ridge`.
    int max_rounds = 12;
    int patience = 4;
    int ridge_steps = 6;
    /// Use the training inputs themselves as centres (needs hidden_count = train size).
    bool centers_from_inputs = false;

    void check() const;
    std::uint64_t hash() const;
    static TrainConfig preset(const std::string& name);
};

struct TrainTrace {
    struct Round {
        double spread;
        double ridge;
        double train_mse;
        double val_mse;
    };
    std::vector<Round> rounds;
    std::size_t best = 0;
    std::vector<std::size_t> train_index, val_index;
};

struct TrainResult {
    RbfModel model;
    TrainTrace trace;
};

/// k-means++ seeding and at most 25 Lloyd iterations. Rows are points.
Eigen::MatrixXd select_centers(const Eigen::MatrixXd& points, int k, std::uint64_t seed);

/// `inputs` and `targets` hold one sample per row.
TrainResult train(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets, RbfMode mode, const TrainConfig& cfg,
                  std::uint64_t mesh_id = 0, std::uint64_t schedule_id = 0);

/// Post-processing mode: input is a GN nodal image on the model's mesh.
NodalImage predict(const RbfModel& model, const NodalImage& gn_image);
/// Direct mode: input is a voltage difference frame.
NodalImage predict(const RbfModel& model, const VoltageFrame& dv);

void save_model(const RbfModel& model, const std::filesystem::path& path);
RbfModel load_model(const std::filesystem::path& path);

}  // namespace eit
