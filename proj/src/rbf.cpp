#include "eit/rbf.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include <Eigen/Dense>

#include "eit/errors.hpp"
#include "eit/hash.hpp"
#include "eit/io.hpp"

namespace eit {

std::string to_string(RbfMode m) { return m == RbfMode::Direct ? "direct" : "postproc"; }

RbfMode rbf_mode_from_string(const std::string& s) {
    if (s == "direct") return RbfMode::Direct;
    if (s == "postproc") return RbfMode::PostProc;
    throw FormatError("unknown RBF mode: " + s);
}

Eigen::VectorXd RbfModel::normalize_input(const Eigen::VectorXd& x) const {
    return ((x - in_mean).array() / in_scale.array()).matrix();
}

Eigen::VectorXd RbfModel::denormalize_input(const Eigen::VectorXd& z) const {
    return (z.array() * in_scale.array()).matrix() + in_mean;
}

Eigen::VectorXd RbfModel::normalize_output(const Eigen::VectorXd& t) const {
    return (t.array() - out_min) / out_scale;
}

Eigen::VectorXd RbfModel::denormalize_output(const Eigen::VectorXd& y) const {
    return (y.array() * out_scale + out_min).matrix();
}

Eigen::VectorXd RbfModel::activations(const Eigen::VectorXd& z) const {
    const double inv = 1.0 / (2.0 * spread * spread);
    Eigen::VectorXd h(centers.rows());
    for (Eigen::Index j = 0; j < centers.rows(); ++j) h[j] = std::exp(-(centers.row(j).transpose() - z).squaredNorm() * inv);
    return h;
}

Eigen::VectorXd RbfModel::evaluate(const Eigen::VectorXd& input) const {
    if (input.size() != input_dim())
        throw DimensionError("RBF input has " + std::to_string(input.size()) + " features, model expects " +
                             std::to_string(input_dim()));
    return denormalize_output(weights * activations(normalize_input(input)) + bias);
}

void RbfModel::check() const {
    if (!(spread > 0)) throw DimensionError("RBF spread must be positive");
    if (weights.cols() != centers.rows() || bias.size() != weights.rows() || in_mean.size() != centers.cols() ||
        in_scale.size() != centers.cols())
        throw DimensionError("RBF model arrays are inconsistent");
    if (mode == RbfMode::Direct && centers.cols() != Eigen::Index(kFrameLength))
        throw DimensionError("direct-mode models take a full voltage frame");
    if (mode == RbfMode::PostProc && centers.cols() != weights.rows())
        throw DimensionError("post-processing models map a nodal image to one of the same size");
    if (!(out_scale > 0) || !((in_scale.array() > 0).all())) throw DimensionError("RBF normalisation is degenerate");
}

void TrainConfig::check() const {
    if (hidden_count < 1) throw DimensionError("hidden_count must be at least 1");
    if (!(val_fraction > 0 && val_fraction < 0.5)) throw DimensionError("val_fraction must lie in (0, 0.5)");
    if (spread < 0 || ridge < 0) throw DimensionError("spread and ridge must be non-negative");
    if (max_rounds < 0 || patience < 1) throw DimensionError("invalid round limits");
    if (ridge_steps < 1) throw DimensionError("ridge_steps must be at least 1");
}

std::uint64_t TrainConfig::hash() const {
    Fnv1a h;
    h.add(hidden_count).add(spread).add(ridge).add(val_fraction).add(seed).add(max_rounds).add(patience);
    h.add(std::uint8_t(centers_from_inputs)).add(ridge_steps);
    return h.value();
}

TrainConfig TrainConfig::preset(const std::string& name) {
    TrainConfig c;
    if (name == "desk") c.hidden_count = 200;
    else if (name == "paper") c.hidden_count = 2000;
    else throw FormatError("unknown preset: " + name);
    return c;
}

Eigen::MatrixXd select_centers(const Eigen::MatrixXd& points, int k, std::uint64_t seed) {
    const Eigen::Index n = points.rows();
    if (k < 1 || k > n) throw DimensionError("centre count must lie in [1, sample count]");
    if (k > 1) {
        bool same = true;
        for (Eigen::Index i = 1; i < n && same; ++i) same = points.row(i) == points.row(0);
        if (same) throw DegenerateDataError("all inputs are identical; cannot place more than one centre");
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    Eigen::MatrixXd centers(k, points.cols());
    std::vector<Eigen::Index> chosen;
    chosen.push_back(Eigen::Index(std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng)));
    centers.row(0) = points.row(chosen[0]);
    Eigen::VectorXd d2 = (points.rowwise() - centers.row(0)).rowwise().squaredNorm();
    for (int c = 1; c < k; ++c) {
        const double total = d2.sum();
        Eigen::Index pick = 0;
        if (total > 0) {
            double r = u01(rng) * total, acc = 0.0;
            pick = n - 1;
            for (Eigen::Index i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc > r && d2[i] > 0) {
                    pick = i;
                    break;
                }
            }
            while (d2[pick] == 0 && pick > 0) --pick;
        } else {
            // Fewer distinct points than centres: reuse points in index order.
            pick = Eigen::Index(c) % n;
        }
        centers.row(c) = points.row(pick);
        d2 = d2.cwiseMin((points.rowwise() - centers.row(c)).rowwise().squaredNorm());
    }

    std::vector<int> assign(std::size_t(n), -1);
    for (int iter = 0; iter < 25; ++iter) {
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::Index best = 0;
            (centers.rowwise() - points.row(i)).rowwise().squaredNorm().minCoeff(&best);
            if (assign[std::size_t(i)] != int(best)) {
                assign[std::size_t(i)] = int(best);
                changed = true;
            }
        }
        if (!changed) break;
        Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(k, points.cols());
        std::vector<int> count(std::size_t(k), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sum.row(assign[std::size_t(i)]) += points.row(i);
            ++count[std::size_t(assign[std::size_t(i)])];
        }
        for (int c = 0; c < k; ++c)
            if (count[std::size_t(c)] > 0) centers.row(c) = sum.row(c) / double(count[std::size_t(c)]);
    }
    return centers;
}

namespace {

Eigen::MatrixXd activation_matrix(const Eigen::MatrixXd& z, const Eigen::MatrixXd& centers, double spread) {
    // Squared distances via |a|^2 + |b|^2 - 2 a.b, clamped at zero.
    const Eigen::VectorXd zn = z.rowwise().squaredNorm();
    const Eigen::VectorXd cn = centers.rowwise().squaredNorm();
    Eigen::MatrixXd d2 = -2.0 * z * centers.transpose();
    d2.colwise() += zn;
    d2.rowwise() += cn.transpose();
    return (-d2.array().max(0.0) / (2.0 * spread * spread)).exp().matrix();
}

struct Fit {
    Eigen::MatrixXd weights;  // hidden x output
    Eigen::RowVectorXd bias;
};

// Ridge least squares with an unpenalised bias for every ridge of a ladder,
// sharing one SVD of the centred activations.
class RidgePath {
public:
    RidgePath(const Eigen::MatrixXd& h, const Eigen::MatrixXd& t)
        : h_mean_(h.colwise().mean()), t_mean_(t.colwise().mean()) {
        const Eigen::MatrixXd hc = h.rowwise() - h_mean_;
        Eigen::BDCSVD<Eigen::MatrixXd> svd(hc, Eigen::ComputeThinU | Eigen::ComputeThinV);
        s_ = svd.singularValues();
        v_ = svd.matrixV();
        ut_ = svd.matrixU().transpose() * (t.rowwise() - t_mean_);
        cols_ = h.cols();
    }

    Fit solve(double ridge) const {
        Eigen::VectorXd f(s_.size());
        const double smax = s_.size() ? s_[0] : 0.0;
        for (Eigen::Index i = 0; i < s_.size(); ++i) {
            if (ridge > 0) f[i] = s_[i] / (s_[i] * s_[i] + ridge);
            else f[i] = s_[i] > smax * 1e-12 ? 1.0 / s_[i] : 0.0;
        }
        if (ridge == 0 && (s_.size() < cols_ || s_[s_.size() - 1] <= smax * 1e-12)) {
            Eigen::Index rank = 0;
            for (Eigen::Index i = 0; i < s_.size(); ++i) rank += s_[i] > smax * 1e-12;
            throw SingularGramError("RBF activations are rank deficient (rank " + std::to_string(rank + 1) + " < " +
                                    std::to_string(cols_ + 1) + "); use a positive ridge");
        }
        Fit fit;
        fit.weights = v_ * (f.asDiagonal() * ut_);
        fit.bias = t_mean_ - h_mean_ * fit.weights;
        if (!fit.weights.allFinite() || !fit.bias.allFinite())
            throw SingularGramError("RBF output weights are not finite; raise the ridge");
        return fit;
    }

private:
    Eigen::RowVectorXd h_mean_, t_mean_;
    Eigen::VectorXd s_;
    Eigen::MatrixXd v_, ut_;
    Eigen::Index cols_ = 0;
};

double mse(const Eigen::MatrixXd& h, const Fit& f, const Eigen::MatrixXd& t) {
    if (t.size() == 0) return 0.0;
    const Eigen::MatrixXd pred = (h * f.weights).rowwise() + f.bias;
    return (pred - t).squaredNorm() / double(t.size());
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& m, const std::vector<std::size_t>& idx) {
    Eigen::MatrixXd out(Eigen::Index(idx.size()), m.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(Eigen::Index(i)) = m.row(Eigen::Index(idx[i]));
    return out;
}

}  // namespace

TrainResult train(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets, RbfMode mode, const TrainConfig& cfg,
                  std::uint64_t mesh_id, std::uint64_t schedule_id) {
    cfg.check();
    const Eigen::Index n = inputs.rows();
    if (n < 10) throw DimensionError("training needs at least 10 samples");
    if (targets.rows() != n) throw DimensionError("inputs and targets have different sample counts");
    if (mode == RbfMode::Direct && inputs.cols() != Eigen::Index(kFrameLength))
        throw DimensionError("direct mode expects 928 voltage features");
    if (mode == RbfMode::PostProc && inputs.cols() != targets.cols())
        throw DimensionError("post-processing mode expects nodal images matching the target length");
    if (!inputs.allFinite() || !targets.allFinite()) throw DimensionError("training data contain non-finite values");

    TrainResult out;
    auto& tr = out.trace;
    std::vector<std::size_t> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(cfg.seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto nval = std::max<std::size_t>(1, std::size_t(std::lround(cfg.val_fraction * double(n))));
    tr.val_index.assign(perm.begin(), perm.begin() + long(nval));
    tr.train_index.assign(perm.begin() + long(nval), perm.end());
    std::sort(tr.val_index.begin(), tr.val_index.end());
    std::sort(tr.train_index.begin(), tr.train_index.end());
    if (Eigen::Index(tr.train_index.size()) < cfg.hidden_count)
        throw DimensionError("hidden_count exceeds the number of training samples");

    RbfModel& m = out.model;
    m.mode = mode;
    m.mesh_id = mesh_id;
    m.schedule_id = schedule_id;
    m.config_hash = cfg.hash();
    m.seed = cfg.seed;
    const Eigen::MatrixXd xtr = take_rows(inputs, tr.train_index), xva = take_rows(inputs, tr.val_index);
    const Eigen::MatrixXd ttr = take_rows(targets, tr.train_index), tva = take_rows(targets, tr.val_index);

    m.in_mean = xtr.colwise().mean().transpose();
    m.in_scale = ((xtr.rowwise() - m.in_mean.transpose()).colwise().squaredNorm() / double(xtr.rows())).cwiseSqrt().transpose();
    const double floor = std::max(1e-12 * m.in_scale.maxCoeff(), 1e-300);
    for (Eigen::Index j = 0; j < m.in_scale.size(); ++j)
        if (!(m.in_scale[j] > floor)) m.in_scale[j] = 1.0;
    m.out_min = ttr.minCoeff();
    m.out_scale = ttr.maxCoeff() - m.out_min;
    if (!(m.out_scale > 0)) m.out_scale = 1.0;

    auto norm_in = [&](const Eigen::MatrixXd& x) {
        return Eigen::MatrixXd(((x.rowwise() - m.in_mean.transpose()).array().rowwise() / m.in_scale.transpose().array()));
    };
    const Eigen::MatrixXd ztr = norm_in(xtr), zva = norm_in(xva);
    const Eigen::MatrixXd ytr = (ttr.array() - m.out_min) / m.out_scale;
    const Eigen::MatrixXd yva = (tva.array() - m.out_min) / m.out_scale;

    m.centers = cfg.centers_from_inputs ? ztr.topRows(cfg.hidden_count) : select_centers(ztr, cfg.hidden_count, cfg.seed);

    double spread0 = cfg.spread;
    if (spread0 == 0.0) {
        // Median distance from each centre to its nearest neighbour among
        // the centres, or to the training points for a single centre.
        std::vector<double> nearest;
        const Eigen::MatrixXd& ref = m.centers.rows() > 1 ? m.centers : ztr;
        for (Eigen::Index j = 0; j < m.centers.rows(); ++j) {
            double best = std::numeric_limits<double>::infinity();
            for (Eigen::Index i = 0; i < ref.rows(); ++i) {
                const double d = (ref.row(i) - m.centers.row(j)).squaredNorm();
                if (d > 0) best = std::min(best, d);
            }
            if (std::isfinite(best)) nearest.push_back(std::sqrt(best));
        }
        if (nearest.empty()) spread0 = 0.25;
        else {
            std::nth_element(nearest.begin(), nearest.begin() + long(nearest.size() / 2), nearest.end());
            spread0 = 0.25 * nearest[nearest.size() / 2];
        }
    }

    // Log grid: the spread doubles every round and every spread is fitted
    // over a ridge ladder of decades. Stops after `patience` rounds without a
    // better validation MSE.
    Fit best_fit;
    double best_val = std::numeric_limits<double>::infinity();
    double best_spread = spread0;
    int stale = 0;
    for (int round = 0; round <= cfg.max_rounds && stale < cfg.patience; ++round) {
        const double spread = spread0 * std::ldexp(1.0, round);
        const Eigen::MatrixXd htr = activation_matrix(ztr, m.centers, spread);
        const Eigen::MatrixXd hva = activation_matrix(zva, m.centers, spread);
        const RidgePath path(htr, ytr);
        bool improved = false;
        for (int j = 0; j < cfg.ridge_steps; ++j) {
            const double ridge = cfg.ridge * std::pow(10.0, j);
            Fit f = path.solve(ridge);
            const double val_mse = mse(hva, f, yva);
            tr.rounds.push_back({spread, ridge, mse(htr, f, ytr), val_mse});
            if (val_mse < best_val) {
                best_val = val_mse;
                best_spread = spread;
                best_fit = std::move(f);
                tr.best = tr.rounds.size() - 1;
                improved = true;
            }
            if (cfg.ridge == 0) break;
        }
        stale = improved ? 0 : stale + 1;
    }

    m.spread = best_spread;
    m.weights = best_fit.weights.transpose();
    m.bias = best_fit.bias.transpose();
    return out;
}

NodalImage predict(const RbfModel& model, const NodalImage& gn_image) {
    if (model.mode != RbfMode::PostProc) throw DimensionError("model is not a post-processing model");
    if (model.mesh_id != 0 && gn_image.mesh_id != 0 && model.mesh_id != gn_image.mesh_id)
        throw ProvenanceError("GN image belongs to a different mesh than the model");
    return {model.evaluate(gn_image.values), model.mesh_id};
}

NodalImage predict(const RbfModel& model, const VoltageFrame& dv) {
    if (model.mode != RbfMode::Direct) throw DimensionError("model is not a direct model");
    if (model.schedule_id != 0 && dv.schedule_id != 0 && model.schedule_id != dv.schedule_id)
        throw ProvenanceError("voltage frame comes from a different schedule than the model");
    return {model.evaluate(dv.values), model.mesh_id};
}

void save_model(const RbfModel& m, const std::filesystem::path& path) {
    m.check();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot write " + path.string());
    os.write("EITM", 4);
    write_u32(os, 1);
    os.put(char(m.mode));
    write_u64(os, std::uint64_t(m.input_dim()));
    write_u64(os, std::uint64_t(m.output_dim()));
    write_u64(os, std::uint64_t(m.hidden_count()));
    write_f64(os, m.spread);
    write_f64_block(os, m.in_mean.data(), std::size_t(m.in_mean.size()));
    write_f64_block(os, m.in_scale.data(), std::size_t(m.in_scale.size()));
    write_f64(os, m.out_min);
    write_f64(os, m.out_scale);
    write_f64_block(os, m.centers.data(), std::size_t(m.centers.size()));
    write_f64_block(os, m.weights.data(), std::size_t(m.weights.size()));
    write_f64_block(os, m.bias.data(), std::size_t(m.bias.size()));
    write_u64(os, m.mesh_id);
    write_u64(os, m.schedule_id);
    write_u64(os, m.config_hash);
    write_u64(os, m.seed);
    write_u64(os, m.gn_config_hash);
    if (!os) throw FormatError("write failed: " + path.string());
}

RbfModel load_model(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "EITM", 4) != 0) throw FormatError("not an EITM model file");
    if (read_u32(is) != 1) throw FormatError("unsupported EITM version");
    const int mode = is.get();
    if (mode != 0 && mode != 1) throw FormatError("EITM: unknown mode byte");
    RbfModel m;
    m.mode = RbfMode(mode);
    const auto in = read_u64(is), out = read_u64(is), hidden = read_u64(is);
    if (in > (1u << 24) || out > (1u << 24) || hidden > (1u << 24) || in * hidden > (1ull << 31))
        throw FormatError("EITM dimensions are implausible");
    m.spread = read_f64(is);
    m.in_mean.resize(Eigen::Index(in));
    m.in_scale.resize(Eigen::Index(in));
    read_f64_block(is, m.in_mean.data(), in);
    read_f64_block(is, m.in_scale.data(), in);
    m.out_min = read_f64(is);
    m.out_scale = read_f64(is);
    m.centers.resize(Eigen::Index(hidden), Eigen::Index(in));
    m.weights.resize(Eigen::Index(out), Eigen::Index(hidden));
    m.bias.resize(Eigen::Index(out));
    read_f64_block(is, m.centers.data(), std::size_t(m.centers.size()));
    read_f64_block(is, m.weights.data(), std::size_t(m.weights.size()));
    read_f64_block(is, m.bias.data(), std::size_t(m.bias.size()));
    m.mesh_id = read_u64(is);
    m.schedule_id = read_u64(is);
    m.config_hash = read_u64(is);
    m.seed = read_u64(is);
    m.gn_config_hash = read_u64(is);
    m.check();
    return m;
}

}  // namespace eit
