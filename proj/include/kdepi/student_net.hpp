#pragma once

// Student network: a fully connected MLP mapping a scaled observation series
// to the scaled calibration + projection series, trained on teacher outputs
// only with mean squared error (imitation loss).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kdepi/distill_pool.hpp"
#include "kdepi/errors.hpp"
#include "kdepi/rng.hpp"

namespace kdepi {

enum class Activation : std::uint32_t { relu = 0, tanh = 1 };

// global: every series is divided by one fixed scale (persons).
// per_sequence: each series is divided by the peak of its own calibration
// window, so the network sees shapes on a common O(1) range.
enum class Normalization : std::uint32_t { global = 0, per_sequence = 1 };

struct MlpModel {
    std::vector<int> layer_dims;          // input, hidden..., output
    std::vector<Eigen::MatrixXd> weights; // layer l: dims[l+1] x dims[l]
    std::vector<Eigen::VectorXd> biases;
    Activation activation = Activation::relu;
    Normalization normalization = Normalization::global;
    double normalization_scale = 1.0;     // persons; global mode only

    int input_dim() const { return layer_dims.front(); }
    int output_dim() const { return layer_dims.back(); }
    std::size_t n_layers() const { return weights.size(); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
        return n;
    }

    void validate() const {
        if (layer_dims.size() < 2) throw ConfigError("MLP needs at least an input and an output layer");
        if (weights.size() != layer_dims.size() - 1 || biases.size() != weights.size())
            throw ConfigError("MLP parameter list does not match its layer dims");
        for (std::size_t l = 0; l < weights.size(); ++l) {
            if (weights[l].rows() != layer_dims[l + 1] || weights[l].cols() != layer_dims[l] ||
                biases[l].size() != layer_dims[l + 1])
                throw ConfigError("MLP layer shapes are inconsistent");
            if (!weights[l].allFinite() || !biases[l].allFinite())
                throw DivergenceError("MLP parameters are not finite");
        }
        if (!(normalization_scale > 0.0) || !std::isfinite(normalization_scale))
            throw ConfigError("normalization scale must be positive");
    }

    // Flat parameter view in layer order, weights (column-major) then bias.
    std::vector<double> flatten() const {
        std::vector<double> out;
        out.reserve(parameter_count());
        for (std::size_t l = 0; l < weights.size(); ++l) {
            out.insert(out.end(), weights[l].data(), weights[l].data() + weights[l].size());
            out.insert(out.end(), biases[l].data(), biases[l].data() + biases[l].size());
        }
        return out;
    }

    void unflatten(std::span<const double> flat) {
        if (flat.size() != parameter_count()) throw ConfigError("flat parameter size mismatch");
        std::size_t pos = 0;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), weights[l].size(), weights[l].data());
            pos += static_cast<std::size_t>(weights[l].size());
            std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), biases[l].size(), biases[l].data());
            pos += static_cast<std::size_t>(biases[l].size());
        }
    }
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
inline MlpModel init_mlp(std::vector<int> layer_dims, std::uint64_t seed,
                         Activation activation = Activation::relu) {
    if (layer_dims.size() < 2) throw ConfigError("MLP needs at least an input and an output layer");
    for (int d : layer_dims)
        if (d < 1) throw ConfigError("MLP layer widths must be positive");
    MlpModel m;
    m.layer_dims = std::move(layer_dims);
    m.activation = activation;
    Rng rng = make_rng(seed, 0x1417);
    for (std::size_t l = 0; l + 1 < m.layer_dims.size(); ++l) {
        const int in = m.layer_dims[l];
        const int out = m.layer_dims[l + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        Eigen::MatrixXd w(out, in);
        Eigen::VectorXd b(out);
        for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = uniform_real(rng, -bound, bound);
        for (Eigen::Index k = 0; k < b.size(); ++k) b[k] = uniform_real(rng, -bound, bound);
        m.weights.push_back(std::move(w));
        m.biases.push_back(std::move(b));
    }
    return m;
}

namespace detail {

inline void activate(Eigen::MatrixXd& z, Activation a) {
    if (a == Activation::relu)
        z = z.cwiseMax(0.0);
    else
        z = z.array().tanh().matrix();
}

// d(activation)/dz given the activated output h.
inline void activation_grad_inplace(Eigen::MatrixXd& delta, const Eigen::MatrixXd& h, Activation a) {
    if (a == Activation::relu)
        delta = (h.array() > 0.0).select(delta, 0.0);
    else
        delta = (delta.array() * (1.0 - h.array().square())).matrix();
}

// Forward pass keeping every layer output; acts[0] is the input.
inline std::vector<Eigen::MatrixXd> forward_all(const MlpModel& m, const Eigen::MatrixXd& x) {
    std::vector<Eigen::MatrixXd> acts;
    acts.reserve(m.n_layers() + 1);
    acts.push_back(x);
    for (std::size_t l = 0; l < m.n_layers(); ++l) {
        Eigen::MatrixXd z = m.weights[l] * acts.back();
        z.colwise() += m.biases[l];
        if (l + 1 < m.n_layers()) activate(z, m.activation);
        acts.push_back(std::move(z));
    }
    return acts;
}

}  // namespace detail

// Batched forward: x is input_dim x batch, one column per series.
inline Eigen::MatrixXd forward(const MlpModel& m, const Eigen::MatrixXd& x) {
    if (x.rows() != m.input_dim()) throw DataError("input length does not match the network input layer");
    return std::move(detail::forward_all(m, x).back());
}

inline std::vector<double> forward(const MlpModel& m, std::span<const double> x) {
    if (x.size() != static_cast<std::size_t>(m.input_dim()))
        throw DataError("input length does not match the network input layer");
    const Eigen::MatrixXd in = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    const Eigen::MatrixXd out = forward(m, in);
    return {out.data(), out.data() + out.size()};
}

// Mean of squared differences over every element.
inline double mse_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols() || pred.size() == 0)
        throw DataError("prediction and target shapes differ");
    return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

inline double mse_loss(std::span<const double> pred, std::span<const double> target) {
    if (pred.size() != target.size() || pred.empty()) throw DataError("prediction and target lengths differ");
    double acc = 0.0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
        const double d = pred[k] - target[k];
        acc += d * d;
    }
    return acc / static_cast<double>(pred.size());
}

struct Gradients {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;
    double loss = 0.0;

    std::vector<double> flatten() const {
        std::vector<double> out;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            out.insert(out.end(), weights[l].data(), weights[l].data() + weights[l].size());
            out.insert(out.end(), biases[l].data(), biases[l].data() + biases[l].size());
        }
        return out;
    }
};

// Backpropagation of mse_loss over a batch (columns of x and y).
inline Gradients backward(const MlpModel& m, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    if (x.cols() != y.cols() || y.rows() != m.output_dim())
        throw DataError("batch inputs and targets do not match the network");
    const auto acts = detail::forward_all(m, x);
    Gradients g;
    g.loss = mse_loss(acts.back(), y);
    if (!std::isfinite(g.loss)) throw DivergenceError("training loss is not finite");
    g.weights.resize(m.n_layers());
    g.biases.resize(m.n_layers());

    Eigen::MatrixXd delta = (acts.back() - y) * (2.0 / static_cast<double>(y.size()));
    for (std::size_t l = m.n_layers(); l-- > 0;) {
        g.weights[l].noalias() = delta * acts[l].transpose();
        g.biases[l] = delta.rowwise().sum();
        if (l > 0) {
            Eigen::MatrixXd prev = m.weights[l].transpose() * delta;
            detail::activation_grad_inplace(prev, acts[l], m.activation);
            delta = std::move(prev);
        }
    }
    return g;
}

struct TrainConfig {
    int batch_size = 128;
    double learning_rate = 0.1;
    double weight_decay = 1e-5;
    int epochs = 300;
    std::vector<int> lr_decay_epochs{100, 200};
    double lr_decay_factor = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::vector<int> hidden{80, 80, 80};
    Activation activation = Activation::relu;
    Normalization normalization = Normalization::per_sequence;
    std::uint64_t seed = 0;

    void validate() const {
        if (batch_size < 1 || epochs < 1) throw ConfigError("batch size and epochs must be positive");
        if (!(learning_rate >= 0.0) || !(weight_decay >= 0.0))
            throw ConfigError("learning rate and weight decay must be non-negative");
        if (!(lr_decay_factor > 0.0)) throw ConfigError("lr decay factor must be positive");
        for (int e : lr_decay_epochs)
            if (e < 1 || e >= epochs) throw ConfigError("lr decay epochs must lie inside the run");
        for (int h : hidden)
            if (h < 1) throw ConfigError("hidden widths must be positive");
    }

    // Schedule multiplier applied to both the Adam step and the decay term.
    double schedule(int epoch) const {
        double eta = 1.0;
        for (int e : lr_decay_epochs)
            if (epoch >= e) eta *= lr_decay_factor;
        return eta;
    }
};

// Adam with decoupled weight decay:
//   p <- p - eta_t * (lr * m_hat / (sqrt(v_hat) + eps) + wd * p)
// where eta_t is the step-decay multiplier. With lr = 0 only the decay acts.
class AdamW {
public:
    AdamW(const MlpModel& m, const TrainConfig& cfg) : cfg_(cfg) {
        for (std::size_t l = 0; l < m.n_layers(); ++l) {
            mw_.push_back(Eigen::MatrixXd::Zero(m.weights[l].rows(), m.weights[l].cols()));
            vw_.push_back(mw_.back());
            mb_.push_back(Eigen::VectorXd::Zero(m.biases[l].size()));
            vb_.push_back(mb_.back());
        }
    }

    void step(MlpModel& m, const Gradients& g, double eta) {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
        const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
        for (std::size_t l = 0; l < m.n_layers(); ++l) {
            update(m.weights[l], g.weights[l], mw_[l], vw_[l], c1, c2, eta);
            update(m.biases[l], g.biases[l], mb_[l], vb_[l], c1, c2, eta);
        }
    }

private:
    template <typename P>
    void update(P& p, const P& grad, P& mom, P& vel, double c1, double c2, double eta) const {
        mom = cfg_.beta1 * mom + (1.0 - cfg_.beta1) * grad;
        vel = cfg_.beta2 * vel + (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
        auto adam = (mom.array() / c1) / ((vel.array() / c2).sqrt() + cfg_.epsilon);
        p.array() -= eta * (cfg_.learning_rate * adam + cfg_.weight_decay * p.array());
    }

    TrainConfig cfg_;
    std::vector<Eigen::MatrixXd> mw_, vw_;
    std::vector<Eigen::VectorXd> mb_, vb_;
    int t_ = 0;
};

struct EpochRecord {
    int epoch = 0;
    double learning_rate = 0.0;
    double loss = 0.0;  // sample-weighted mean batch loss, in scaled units
};

struct TrainResult {
    MlpModel model;
    std::vector<EpochRecord> history;
};

// Mini-batch training on pre-scaled data (columns are samples). Batches are
// reshuffled every epoch from the config seed; the last batch may be short.
inline TrainResult train(MlpModel model, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                         const TrainConfig& cfg) {
    cfg.validate();
    model.validate();
    if (inputs.cols() == 0) throw DataError("empty training set");
    if (inputs.cols() != targets.cols() || inputs.rows() != model.input_dim() ||
        targets.rows() != model.output_dim())
        throw DataError("training data does not match the network dimensions");

    const auto n = static_cast<std::size_t>(inputs.cols());
    std::vector<Eigen::Index> order(n);
    for (std::size_t k = 0; k < n; ++k) order[k] = static_cast<Eigen::Index>(k);
    Rng rng = make_rng(cfg.seed, 0x5F1E);
    AdamW opt(model, cfg);
    TrainResult result;
    result.history.reserve(static_cast<std::size_t>(cfg.epochs));

    Eigen::MatrixXd xb, yb;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double eta = cfg.schedule(epoch);
        shuffle(order, rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t len = std::min(n - start, static_cast<std::size_t>(cfg.batch_size));
            xb.resize(inputs.rows(), static_cast<Eigen::Index>(len));
            yb.resize(targets.rows(), static_cast<Eigen::Index>(len));
            for (std::size_t c = 0; c < len; ++c) {
                xb.col(static_cast<Eigen::Index>(c)) = inputs.col(order[start + c]);
                yb.col(static_cast<Eigen::Index>(c)) = targets.col(order[start + c]);
            }
            const Gradients g = backward(model, xb, yb);
            loss_sum += g.loss * static_cast<double>(len);
            opt.step(model, g, eta);
        }
        const double epoch_loss = loss_sum / static_cast<double>(n);
        if (!std::isfinite(epoch_loss))
            throw DivergenceError("training diverged at epoch " + std::to_string(epoch));
        result.history.push_back({epoch, cfg.learning_rate * eta, epoch_loss});
    }
    result.model = std::move(model);
    return result;
}

// ---------------------------------------------------------------------------
// Pool-level helpers: scaling, training from a pool subset, prediction.

struct ScaledData {
    Eigen::MatrixXd inputs;   // calibration_len x n
    Eigen::MatrixXd targets;  // (calibration_len + projection_len) x n
};

// Scale applied to one observation series; 1 when the window is all zero.
inline double sequence_scale(std::span<const double> observation) {
    double peak = 0.0;
    for (double v : observation) peak = std::max(peak, v);
    return peak > 0.0 ? peak : 1.0;
}

// `scale` is used in global mode and ignored in per-sequence mode.
inline ScaledData scale_pairs(const Pool& pool, std::span<const std::size_t> subset, Normalization mode,
                              double scale) {
    ScaledData d;
    const auto n = static_cast<Eigen::Index>(subset.size());
    d.inputs.resize(pool.calibration_len, n);
    d.targets.resize(pool.calibration_len + pool.projection_len, n);
    for (Eigen::Index c = 0; c < n; ++c) {
        const auto& pair = pool.pairs.at(subset[static_cast<std::size_t>(c)]);
        const double s = mode == Normalization::per_sequence ? sequence_scale(pair.observation) : scale;
        for (Eigen::Index r = 0; r < d.inputs.rows(); ++r) d.inputs(r, c) = pair.observation[static_cast<std::size_t>(r)] / s;
        for (Eigen::Index r = 0; r < d.targets.rows(); ++r) d.targets(r, c) = pair.projection[static_cast<std::size_t>(r)] / s;
    }
    return d;
}

// Largest value in the selected pairs; the default global scale.
inline double peak_value(const Pool& pool, std::span<const std::size_t> subset) {
    double peak = 0.0;
    for (auto k : subset) {
        for (double v : pool.pairs.at(k).projection) peak = std::max(peak, v);
    }
    return peak > 0.0 ? peak : 1.0;
}

// Initialise a network sized for the pool and train it on the given subset.
// In global mode normalization_scale <= 0 selects peak_value of the subset.
inline TrainResult train_student(const Pool& pool, std::span<const std::size_t> subset, const TrainConfig& cfg,
                                 double normalization_scale = 0.0) {
    if (subset.empty()) throw DataError("empty training set");
    std::vector<int> dims{pool.calibration_len};
    dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
    dims.push_back(pool.calibration_len + pool.projection_len);
    MlpModel model = init_mlp(dims, cfg.seed, cfg.activation);
    model.normalization = cfg.normalization;
    model.normalization_scale = cfg.normalization == Normalization::per_sequence ? 1.0
                                : normalization_scale > 0.0                      ? normalization_scale
                                                                                 : peak_value(pool, subset);
    const ScaledData data = scale_pairs(pool, subset, model.normalization, model.normalization_scale);
    return train(std::move(model), data.inputs, data.targets, cfg);
}

// scale -> forward -> unscale -> clamp at zero; persons/day in and out.
inline std::vector<double> predict(const MlpModel& m, std::span<const double> observation) {
    if (observation.size() != static_cast<std::size_t>(m.input_dim()))
        throw DataError("observation length does not match the model calibration window");
    const double scale = m.normalization == Normalization::per_sequence ? sequence_scale(observation)
                                                                         : m.normalization_scale;
    std::vector<double> x(observation.begin(), observation.end());
    for (double& v : x) v /= scale;
    auto y = forward(m, x);
    for (double& v : y) v = std::max(0.0, v * scale);
    return y;
}

// ---------------------------------------------------------------------------
// Checkpoint file, version 1, little-endian:
//   magic "KDEPMLP\0" | u32 version | u32 activation | u32 normalization |
//   f64 normalization_scale |
//   u32 n_dims | u32[n_dims] layer dims |
//   per layer: f64[out*in] weights (row-major) | f64[out] bias

inline constexpr char kCheckpointMagic[8] = {'K', 'D', 'E', 'P', 'M', 'L', 'P', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_checkpoint(std::ostream& os, const MlpModel& m) {
    m.validate();
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    io::put<std::uint32_t>(os, kCheckpointVersion);
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.activation));
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.normalization));
    io::put<double>(os, m.normalization_scale);
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.layer_dims.size()));
    for (int d : m.layer_dims) io::put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (std::size_t l = 0; l < m.n_layers(); ++l) {
        for (Eigen::Index r = 0; r < m.weights[l].rows(); ++r)
            for (Eigen::Index c = 0; c < m.weights[l].cols(); ++c) io::put<double>(os, m.weights[l](r, c));
        io::put_doubles(os, std::span<const double>(m.biases[l].data(), static_cast<std::size_t>(m.biases[l].size())));
    }
    if (!os) throw DataError("failed to write checkpoint");
}

inline MlpModel read_checkpoint(std::istream& is) {
    char magic[8];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw DataError("not a model checkpoint");
    if (io::get<std::uint32_t>(is) != kCheckpointVersion) throw DataError("unsupported checkpoint version");
    MlpModel m;
    const auto act = io::get<std::uint32_t>(is);
    if (act > 1) throw DataError("unknown activation in checkpoint");
    m.activation = static_cast<Activation>(act);
    const auto norm = io::get<std::uint32_t>(is);
    if (norm > 1) throw DataError("unknown normalization in checkpoint");
    m.normalization = static_cast<Normalization>(norm);
    m.normalization_scale = io::get<double>(is);
    const auto n_dims = io::get<std::uint32_t>(is);
    if (n_dims < 2 || n_dims > 64) throw DataError("corrupt checkpoint layer count");
    for (std::uint32_t k = 0; k < n_dims; ++k) m.layer_dims.push_back(static_cast<int>(io::get<std::uint32_t>(is)));
    for (std::size_t l = 0; l + 1 < m.layer_dims.size(); ++l) {
        Eigen::MatrixXd w(m.layer_dims[l + 1], m.layer_dims[l]);
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = io::get<double>(is);
        const auto b = io::get_doubles(is, static_cast<std::size_t>(m.layer_dims[l + 1]));
        m.weights.push_back(std::move(w));
        m.biases.push_back(Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size())));
    }
    m.validate();
    return m;
}

inline void save_checkpoint(const std::string& path, const MlpModel& m) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open " + path + " for writing");
    write_checkpoint(os, m);
}

inline MlpModel load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint " + path);
    return read_checkpoint(is);
}

inline void write_loss_history_csv(std::ostream& os, std::span<const EpochRecord> history) {
    os << "epoch,learning_rate,loss\n";
    char buf[96];
    for (const auto& rec : history) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", rec.epoch, rec.learning_rate, rec.loss);
        os << buf;
    }
}

}  // namespace kdepi
