#include "taet/attacks.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <stdexcept>

#include "taet/rng.hpp"

namespace taet {

namespace {

double sign(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

void check_clip(double lo, double hi) {
    if (!(lo < hi)) throw std::invalid_argument("attack clip_min must be below clip_max");
}

Tensor input_gradient(const Model& model, const Tensor& x, std::span<const Label> labels,
                      const LossSelector& loss) {
    return loss_and_grads(model, x, labels, loss, {.params = false, .inputs = true}).input_grads;
}

void clip_box(Tensor& t, double lo, double hi) {
    for (double& v : t.data()) v = std::clamp(v, lo, hi);
}

}  // namespace

void AttackConfig::validate() const {
    if (!(epsilon >= 0)) throw std::invalid_argument("attack epsilon must be non-negative");
    if (!(step_size > 0)) throw std::invalid_argument("attack step size must be positive");
    if (num_steps < 1) throw std::invalid_argument("attack needs at least one step");
    if (!(init_scale >= 0)) throw std::invalid_argument("attack init scale must be non-negative");
    check_clip(clip_min, clip_max);
}

bool AttackConfig::oversized_step() const { return epsilon > 0 && step_size > 2 * epsilon; }

void CwConfig::validate() const {
    if (!(c > 0)) throw std::invalid_argument("CW constant c must be positive");
    if (!(kappa >= 0)) throw std::invalid_argument("CW kappa must be non-negative");
    if (num_iters < 1) throw std::invalid_argument("CW needs at least one iteration");
    if (!(step_size > 0)) throw std::invalid_argument("CW step size must be positive");
    check_clip(clip_min, clip_max);
}

BallBounds ball_bounds(double x0, double epsilon) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    double lo = x0 - epsilon;
    double hi = x0 + epsilon;
    while (hi - x0 > epsilon) hi = std::nextafter(hi, -inf);
    while (x0 - lo > epsilon) lo = std::nextafter(lo, inf);
    return {lo, hi};
}

Tensor fgsm(const Model& model, const Tensor& x, std::span<const Label> labels, const FgsmConfig& cfg) {
    if (!(cfg.epsilon >= 0)) throw std::invalid_argument("FGSM epsilon must be non-negative");
    check_clip(cfg.clip_min, cfg.clip_max);
    const Tensor g = input_gradient(model, x, labels, loss::CrossEntropy{});
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto b = ball_bounds(x[i], cfg.epsilon);
        out[i] = std::clamp(x[i] + cfg.epsilon * sign(g[i]), b.lo, b.hi);
    }
    clip_box(out, cfg.clip_min, cfg.clip_max);
    return out;
}

Tensor pgd(const Model& model, const Tensor& x, std::span<const Label> labels, const AttackConfig& cfg,
           std::uint64_t seed, std::span<const std::size_t> sample_ids) {
    cfg.validate();
    if (cfg.oversized_step()) {
        std::cerr << "warning: PGD step size " << cfg.step_size << " exceeds 2*epsilon " << 2 * cfg.epsilon << '\n';
    }
    if (!sample_ids.empty() && sample_ids.size() != x.rows()) {
        throw std::invalid_argument("PGD sample id count does not match batch");
    }
    std::vector<BallBounds> bounds(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) bounds[i] = ball_bounds(x[i], cfg.epsilon);

    Tensor adv = x;
    if (cfg.random_init && cfg.init_scale > 0) {
        const std::size_t dim = x.cols();
        for (std::size_t n = 0; n < x.rows(); ++n) {
            const std::uint64_t id = sample_ids.empty() ? n : sample_ids[n];
            auto rng = make_rng({seed, kAttackStream, id});
            std::normal_distribution<double> noise(0.0, 1.0);
            for (std::size_t j = 0; j < dim; ++j) {
                const std::size_t i = n * dim + j;
                adv[i] = std::clamp(x[i] + cfg.init_scale * noise(rng), bounds[i].lo, bounds[i].hi);
            }
        }
    }
    for (int step = 0; step < cfg.num_steps; ++step) {
        const Tensor g = input_gradient(model, adv, labels, cfg.loss);
        for (std::size_t i = 0; i < adv.size(); ++i) {
            adv[i] = std::clamp(adv[i] + cfg.step_size * sign(g[i]), bounds[i].lo, bounds[i].hi);
        }
    }
    clip_box(adv, cfg.clip_min, cfg.clip_max);
    return adv;
}

CwResult cw_l2(const Model& model, const Tensor& x, std::span<const Label> labels, const CwConfig& cfg) {
    cfg.validate();
    const std::size_t batch = x.rows();
    const std::size_t dim = x.cols();
    const std::size_t classes = model.spec().num_classes;
    if (labels.size() != batch) throw std::invalid_argument("CW label count does not match batch");

    Tensor adv = x;
    clip_box(adv, cfg.clip_min, cfg.clip_max);
    CwResult result{adv, std::vector<bool>(batch, false)};
    std::vector<double> best(batch, std::numeric_limits<double>::infinity());

    for (int it = 0; it <= cfg.num_iters; ++it) {
        ForwardTrace trace = forward_traced(model, adv);
        const auto pred = predicted_classes(trace.logits);
        Tensor logit_grad = Tensor::matrix(batch, classes);
        bool any_active = false;
        for (std::size_t n = 0; n < batch; ++n) {
            const auto y = static_cast<std::size_t>(labels[n]);
            auto z = trace.logits.row(n);
            std::size_t other = y == 0 ? 1 : 0;
            for (std::size_t i = 0; i < classes; ++i) {
                if (i != y && z[i] > z[other]) other = i;
            }
            const double margin = z[y] - z[other];
            const double f = std::max(margin, -cfg.kappa);
            double norm2 = 0.0;
            for (std::size_t j = 0; j < dim; ++j) {
                const double d = adv(n, j) - x(n, j);
                norm2 += d * d;
            }
            const double objective = std::sqrt(norm2) + cfg.c * f;
            if (pred[n] != labels[n] && objective < best[n]) {
                best[n] = objective;
                result.success[n] = true;
                std::copy(adv.row(n).begin(), adv.row(n).end(), result.adversarial.row(n).begin());
            }
            if (margin > -cfg.kappa) {
                logit_grad(n, y) = cfg.c;
                logit_grad(n, other) = -cfg.c;
                any_active = true;
            }
        }
        if (it == cfg.num_iters) break;

        Tensor g = any_active ? backward(model, trace, logit_grad, {.params = false, .inputs = true}).inputs
                              : Tensor::matrix(batch, dim);
        for (std::size_t n = 0; n < batch; ++n) {
            std::vector<double> delta(dim);
            double norm2 = 0.0;
            for (std::size_t j = 0; j < dim; ++j) {
                delta[j] = adv(n, j) - x(n, j) - cfg.step_size * g(n, j);
                norm2 += delta[j] * delta[j];
            }
            const double norm = std::sqrt(norm2);
            const double shrink = norm > cfg.step_size ? 1.0 - cfg.step_size / norm : 0.0;
            for (std::size_t j = 0; j < dim; ++j) {
                adv(n, j) = std::clamp(x(n, j) + shrink * delta[j], cfg.clip_min, cfg.clip_max);
            }
        }
    }
    for (std::size_t n = 0; n < batch; ++n) {
        if (!result.success[n]) std::copy(adv.row(n).begin(), adv.row(n).end(), result.adversarial.row(n).begin());
    }
    return result;
}

Tensor run_attack(const Model& model, const Tensor& x, std::span<const Label> labels, const AttackSpec& spec,
                  std::span<const std::size_t> sample_ids) {
    if (const auto* f = std::get_if<FgsmConfig>(&spec.params)) return fgsm(model, x, labels, *f);
    if (const auto* p = std::get_if<AttackConfig>(&spec.params)) return pgd(model, x, labels, *p, spec.seed, sample_ids);
    return cw_l2(model, x, labels, std::get<CwConfig>(spec.params)).adversarial;
}

std::vector<AttackRecord> attack_records(const Model& model, const Tensor& clean, const Tensor& adversarial,
                                         std::span<const Label> labels, std::span<const std::size_t> sample_ids) {
    if (!clean.same_shape(adversarial)) throw std::invalid_argument("clean/adversarial shapes differ");
    const auto clean_pred = predicted_classes(forward(model, clean));
    const auto adv_pred = predicted_classes(forward(model, adversarial));
    std::vector<AttackRecord> out;
    out.reserve(clean.rows());
    for (std::size_t n = 0; n < clean.rows(); ++n) {
        double linf = 0.0;
        double l2 = 0.0;
        for (std::size_t j = 0; j < clean.cols(); ++j) {
            const double d = adversarial(n, j) - clean(n, j);
            linf = std::max(linf, std::abs(d));
            l2 += d * d;
        }
        out.push_back({sample_ids.empty() ? n : sample_ids[n], labels[n], clean_pred[n], adv_pred[n], linf,
                       std::sqrt(l2)});
    }
    return out;
}

void write_attack_csv(const std::filesystem::path& path, std::span<const AttackRecord> records) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "sample_id,true_label,clean_pred,adv_pred,linf,l2\n";
    char a[64];
    char b[64];
    for (const auto& r : records) {
        auto pa = std::to_chars(a, a + sizeof(a), r.linf).ptr;
        auto pb = std::to_chars(b, b + sizeof(b), r.l2).ptr;
        out << r.sample_id << ',' << r.true_label << ',' << r.clean_prediction << ',' << r.adversarial_prediction
            << ',' << std::string_view(a, static_cast<std::size_t>(pa - a)) << ','
            << std::string_view(b, static_cast<std::size_t>(pb - b)) << '\n';
    }
}

}  // namespace taet
