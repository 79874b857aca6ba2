#pragma once

// Full-batch or mini-batch MLP training with any of the optimizers, logging
// loss, accuracy, Hessian spectrum and thresholds at a fixed cadence.

#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "vlab/diagnostics.hpp"
#include "vlab/error.hpp"
#include "vlab/models/dataset.hpp"
#include "vlab/models/mlp.hpp"
#include "vlab/optimizers.hpp"
#include "vlab/stability.hpp"

namespace vlab {

enum class OptimizerKind { Gd, Vgd, Adam, Ivon };

inline std::string to_string(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::Gd: return "gd";
        case OptimizerKind::Vgd: return "vgd";
        case OptimizerKind::Adam: return "adam";
        case OptimizerKind::Ivon: return "ivon";
    }
    return "unknown";
}

inline OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "gd") return OptimizerKind::Gd;
    if (s == "vgd") return OptimizerKind::Vgd;
    if (s == "adam") return OptimizerKind::Adam;
    if (s == "ivon") return OptimizerKind::Ivon;
    throw InvalidSpecError("unknown optimizer '" + s + "' (expected gd, vgd, adam or ivon)");
}

struct DataConfig {
    std::string source = "synthetic";  ///< synthetic | csv
    std::string path;                  ///< csv training file
    std::string test_path;             ///< optional csv test file
    std::string label_column = "label";
    int classes = 10;
    int per_class = 50;
    int test_per_class = 20;
    std::size_t input_dim = 20;
    double separation = 1.5;
    double input_scale = 60.0;  ///< synthetic features are multiplied by this
};

struct TrainConfig {
    DataConfig data;
    std::vector<std::size_t> hidden{64, 64};
    Activation activation = Activation::Tanh;
    double init_scale = 1.0;

    OptimizerKind optimizer = OptimizerKind::Gd;
    double rho = 0.05;
    PosteriorSpec spec;  ///< perturbation for vgd; ignored by gd
    double beta2 = 0.99;  ///< adam second-moment decay
    double adam_eps = kDivisionFloor;
    double ivon_beta2 = 0.01;  ///< weight of the new Hessian estimate
    double temperature = 1.0;
    int ivon_samples = 1;
    double ivon_init_precision = 1.0;
    double damping = 0.0;

    std::size_t steps = 1500;
    std::size_t batch_size = 0;  ///< 0 = full batch
    std::size_t log_every = 10;
    std::size_t top_k = 1;
    double eig_tol = 1e-4;
    std::size_t eig_max_iters = 100;
    int elbo_samples = 0;  ///< > 0 logs an ELBO estimate (Gaussian posteriors only)
    bool record_wall_clock = false;
    std::uint64_t seed = 0;
    unsigned workers = 1;

    void validate() const {
        if (!(rho > 0.0) || !std::isfinite(rho)) throw InvalidSpecError("rho must be positive");
        if (steps < 1) throw InvalidSpecError("steps must be >= 1");
        if (log_every < 1) throw InvalidSpecError("log_every must be >= 1");
        if (top_k < 1 || top_k > kMaxTopK) throw InvalidSpecError("top_k must lie in [1, 16]");
        if (hidden.empty()) throw InvalidSpecError("need at least one hidden layer");
        if (optimizer == OptimizerKind::Vgd) spec.validate();
        if (optimizer == OptimizerKind::Adam && !(beta2 >= 0.0 && beta2 < 1.0))
            throw InvalidSpecError("adam beta2 must lie in [0, 1)");
        if (optimizer == OptimizerKind::Ivon) {
            if (!(ivon_beta2 >= 0.0 && ivon_beta2 <= 1.0)) throw InvalidSpecError("ivon beta2 must lie in [0, 1]");
            if (!(damping >= 0.0)) throw InvalidSpecError("ivon damping must be non-negative");
            if (!(temperature > 0.0)) throw InvalidSpecError("ivon temperature must be positive");
            if (ivon_samples < 1) throw InvalidSpecError("ivon samples must be >= 1");
            if (!(ivon_init_precision > 0.0)) throw InvalidSpecError("ivon initial precision must be positive");
        }
    }
};

struct TrainData {
    Dataset train;
    std::optional<Dataset> test;
    std::vector<std::string> warnings;
};

/// Stream layout under RandomStream(seed): 0 train data, 1 test data, 2 init,
/// 3 optimizer steps, 4 eigen-solver starts, 5 batch order, 6 ELBO samples,
/// 7 preconditioned-spectrum starts.
inline TrainData build_data(const DataConfig& cfg, std::uint64_t seed) {
    TrainData out;
    const RandomStream root(seed);
    if (cfg.source == "synthetic") {
        RandomStream s0 = root.child(0);
        out.train = synth_dataset(cfg.classes, cfg.per_class, cfg.input_dim, cfg.separation, s0);
        for (double& x : out.train.inputs.data()) x *= cfg.input_scale;
        if (cfg.test_per_class > 0) {
            RandomStream s1 = root.child(1);
            Dataset t = synth_dataset(cfg.classes, cfg.test_per_class, cfg.input_dim, cfg.separation, s1);
            for (double& x : t.inputs.data()) x *= cfg.input_scale;
            out.test = std::move(t);
        }
    } else if (cfg.source == "csv") {
        auto r = load_csv_dataset(cfg.path, cfg.label_column);
        out.train = std::move(r.dataset);
        out.warnings = std::move(r.warnings);
        if (!cfg.test_path.empty()) {
            auto t = load_csv_dataset(cfg.test_path, cfg.label_column);
            if (t.dataset.input_dim() != out.train.input_dim() || t.dataset.classes != out.train.classes)
                throw ParseError("test dataset shape does not match the training dataset", 0);
            out.test = std::move(t.dataset);
        }
    } else {
        throw InvalidSpecError("unknown data source '" + cfg.source + "' (expected synthetic or csv)");
    }
    return out;
}

struct TrainResult {
    TrajectoryRecord record;
    Vector params;
    bool diverged = false;
    std::string divergence_reason;
    StabilityClass classification = StabilityClass::Converged;
    double final_sharpness = std::numeric_limits<double>::quiet_NaN();
    double final_loss = std::numeric_limits<double>::quiet_NaN();
    /// Means over logged rows in the second half of training.
    double tracking_gap = std::numeric_limits<double>::quiet_NaN();  ///< |normalized_sharpness - vf|
    double mean_normalized_sharpness = std::numeric_limits<double>::quiet_NaN();
    double mean_vf = std::numeric_limits<double>::quiet_NaN();
    double mean_precond_sharpness = std::numeric_limits<double>::quiet_NaN();
    double mean_sharpness = std::numeric_limits<double>::quiet_NaN();
    double elapsed_seconds = 0.0;
    std::vector<std::string> warnings;
};

namespace detail {

inline double mean_of(const std::vector<double>& v) {
    return v.empty() ? std::numeric_limits<double>::quiet_NaN() : stable_mean(v);
}

}  // namespace detail

inline TrainResult train_mlp(const TrainConfig& cfg, TrajectoryRecord record = {}) {
    cfg.validate();
    const auto t_start = std::chrono::steady_clock::now();
    TrainData data = build_data(cfg.data, cfg.seed);
    const Dataset& train = data.train;

    std::vector<std::size_t> dims{train.input_dim()};
    dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
    dims.push_back(static_cast<std::size_t>(train.classes));
    const Mlp net(dims, cfg.activation);
    const std::size_t d = net.param_count();

    const RandomStream root(cfg.seed);
    RandomStream init_stream = root.child(2);
    const double in_scale = cfg.data.source == "synthetic" ? cfg.data.input_scale : 1.0;
    Vector theta0 = net.init(init_stream, cfg.init_scale, in_scale);

    TrainResult out;
    out.record = std::move(record);
    out.warnings = data.warnings;

    std::optional<BatchSchedule> schedule;
    if (cfg.batch_size > 0 && cfg.batch_size < train.size())
        schedule.emplace(train.size(), cfg.batch_size, root.child(5));
    Batch batch;
    const GradOracle grad = [&](std::span<const double> th, std::span<double> g) {
        net.loss_and_grad(th, train, batch, g);
    };

    GdState gd;
    VgdState vgd;
    AdamState adam;
    VonState von;
    Vector* mean = nullptr;
    switch (cfg.optimizer) {
        case OptimizerKind::Gd:
            gd.m = theta0;
            gd.rho = cfg.rho;
            mean = &gd.m;
            break;
        case OptimizerKind::Vgd:
            vgd.m = theta0;
            vgd.rho = cfg.rho;
            vgd.spec = cfg.spec;
            vgd.spec.validate(d);
            mean = &vgd.m;
            break;
        case OptimizerKind::Adam:
            adam = AdamState(theta0, cfg.rho, cfg.beta2, cfg.adam_eps);
            mean = &adam.m;
            break;
        case OptimizerKind::Ivon:
            von.m = theta0;
            von.P.assign(d, cfg.ivon_init_precision);
            von.rho = cfg.rho;
            von.beta2 = cfg.ivon_beta2;
            von.temperature = cfg.temperature;
            von.n_samples = cfg.ivon_samples;
            von.damping = cfg.damping;
            mean = &von.m;
            break;
    }

    // Spec used for thresholds: the perturbation actually applied at the mean.
    auto threshold_spec = [&]() -> PosteriorSpec {
        switch (cfg.optimizer) {
            case OptimizerKind::Vgd: return vgd.spec;
            case OptimizerKind::Ivon: return PosteriorSpec::diagonal(von.posterior_variance(), von.n_samples);
            default: return PosteriorSpec{};
        }
    };

    Vector warm;
    Vector full_grad(d);
    std::vector<double> loss_trace, norm_trace;

    auto log_row = [&](std::size_t t) {
        TrajectoryRow row;
        row.step = t;
        row.loss = net.loss_and_grad(*mean, train, {}, full_grad);
        row.iterate_norm = norm2(*mean);
        if (cfg.record_wall_clock)
            row.wall_clock = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        loss_trace.push_back(row.loss);
        norm_trace.push_back(*row.iterate_norm);
        if (!std::isfinite(row.loss) || !all_finite(full_grad) || !all_finite(*mean)) {
            row.flags.push_back("diverged");
            out.record.record_step(std::move(row));
            return false;
        }
        row.grad_norm = norm2(full_grad);
        row.train_acc = net.accuracy(*mean, train);
        if (data.test) row.test_acc = net.accuracy(*mean, *data.test);

        const Vector& at = *mean;
        const HvpOracle hvp = [&](std::span<const double> v, std::span<double> o) { net.hvp(at, train, {}, v, o); };
        RandomStream eig_stream = root.child(4).child(t);
        SpectralResult spectrum;
        try {
            spectrum = top_eigen(hvp, d, cfg.top_k, cfg.eig_max_iters, cfg.eig_tol, eig_stream, warm);
        } catch (const NumericalError&) {
            row.flags.push_back("diverged");
            out.record.record_step(std::move(row));
            return false;
        }
        if (!spectrum.converged) row.flags.push_back("eigen-unconverged");
        warm = spectrum.vectors.front();
        row.sharpness = spectrum.values.front();
        row.top_eigs = spectrum.values;
        const PosteriorSpec tspec = threshold_spec();
        const auto modes = spectrum_vs_thresholds(spectrum, full_grad, cfg.rho, tspec);
        for (const auto& mt : modes) {
            row.thresholds.push_back(mt.threshold);
            row.z.push_back(mt.z);
        }
        const auto hp = hypothesis_tracker(spectrum, full_grad, cfg.rho, tspec);
        row.normalized_sharpness = hp.normalized_sharpness;
        row.vf = hp.vf;
        if (hp.z_clamped) row.flags.push_back("z-clamped");

        if (cfg.optimizer == OptimizerKind::Adam || cfg.optimizer == OptimizerKind::Ivon) {
            const Vector precond =
                cfg.optimizer == OptimizerKind::Adam ? adam.effective_precision() : von.effective_precision();
            if (cfg.optimizer == OptimizerKind::Adam && adam.t == 0) {
                row.flags.push_back("preconditioner-uninitialized");
            } else {
                RandomStream ps = root.child(7).child(t);
                row.precond_sharpness =
                    preconditioned_spectrum(hvp, precond, 1, cfg.eig_max_iters, cfg.eig_tol, ps).values.front();
            }
            if (cfg.optimizer == OptimizerKind::Ivon && von.all_clamped) row.flags.push_back("precision-all-clamped");
        }
        if (cfg.elbo_samples > 0 && cfg.optimizer != OptimizerKind::Gd && cfg.optimizer != OptimizerKind::Adam) {
            PosteriorSpec es = tspec;
            if (es.family != PerturbationFamily::StudentT && !es.is_degenerate()) {
                es.n_samples = cfg.elbo_samples;
                const LossOracle lo = [&](std::span<const double> th) { return net.loss(th, train); };
                row.elbo = elbo_estimate(*mean, es, lo, root.child(6).child(t), cfg.workers).value;
            }
        }
        out.final_sharpness = spectrum.values.front();
        out.record.record_step(std::move(row));
        return true;
    };

    bool ok = log_row(0);
    for (std::size_t t = 0; ok && t < cfg.steps; ++t) {
        if (schedule) batch = schedule->at_step(t);
        const RandomStream step_stream = root.child(3).child(t);
        try {
            switch (cfg.optimizer) {
                case OptimizerKind::Gd: gd_step(gd, grad); break;
                case OptimizerKind::Vgd: vgd_step(vgd, grad, step_stream, cfg.workers); break;
                case OptimizerKind::Adam: adam_step(adam, grad); break;
                case OptimizerKind::Ivon: ivon_step(von, grad, step_stream, cfg.workers); break;
            }
        } catch (const NumericalError& e) {
            out.diverged = true;
            out.divergence_reason = e.what();
            TrajectoryRow row;
            row.step = t + 1;
            row.loss = std::numeric_limits<double>::quiet_NaN();
            row.flags.push_back("diverged");
            out.record.record_step(std::move(row));
            break;
        }
        batch.clear();
        if ((t + 1) % cfg.log_every == 0 || t + 1 == cfg.steps) ok = log_row(t + 1);
    }
    if (!ok && !out.diverged) {
        out.diverged = true;
        out.divergence_reason = "non-finite loss or gradient";
    }
    out.params = *mean;

    const auto& rows = out.record.rows();
    std::vector<double> gap, ns, vf, pre, sh;
    const std::size_t half_step = cfg.steps / 2;
    for (const auto& r : rows) {
        if (r.step < half_step || !r.normalized_sharpness || !r.vf) continue;
        gap.push_back(std::abs(*r.normalized_sharpness - *r.vf));
        ns.push_back(*r.normalized_sharpness);
        vf.push_back(*r.vf);
        sh.push_back(*r.sharpness);
        if (r.precond_sharpness) pre.push_back(*r.precond_sharpness);
    }
    out.tracking_gap = detail::mean_of(gap);
    out.mean_normalized_sharpness = detail::mean_of(ns);
    out.mean_vf = detail::mean_of(vf);
    out.mean_precond_sharpness = detail::mean_of(pre);
    out.mean_sharpness = detail::mean_of(sh);
    if (!rows.empty()) out.final_loss = rows.back().loss;
    if (out.diverged) {
        out.classification = StabilityClass::Divergent;
    } else if (loss_trace.size() >= 8) {
        out.classification = classify_stability(loss_trace, norm_trace);
    } else {
        out.classification = StabilityClass::StochasticallyStable;
    }
    out.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return out;
}

}  // namespace vlab
