#include "flowloc/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "flowloc/autodiff.hpp"
#include "flowloc/rng.hpp"
#include "flowloc/util.hpp"

namespace flowloc::gmm {

using ad::Tape;
using ad::Tensor;
using ad::Value;

namespace {

constexpr double kLogTwoPi = 1.8378770664093453;  // log(2*pi)

double log_normal_pdf(double x, double mu, double var) {
    const double d = x - mu;
    return -0.5 * (kLogTwoPi + std::log(var) + d * d / var);
}

// Distance-weighted center seeding over the sorted multiset: the first center
// is a seeded draw, later ones are drawn proportionally to squared distance
// from the nearest existing center.
std::vector<double> seed_centers(const std::vector<double>& sorted, int k, rng::Stream& rs) {
    const std::size_t n = sorted.size();
    std::vector<double> centers;
    centers.push_back(sorted[static_cast<std::size_t>(rs.uniform_int(n - 1))]);
    std::vector<double> d2(n);
    while (static_cast<int>(centers.size()) < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = 1e300;
            for (double c : centers) best = std::min(best, (sorted[i] - c) * (sorted[i] - c));
            d2[i] = best;
            total += best;
        }
        std::size_t pick;
        if (total <= 0.0) {
            pick = static_cast<std::size_t>(rs.uniform_int(n - 1));
        } else {
            pick = rs.categorical(d2.data(), d2.size());
        }
        centers.push_back(sorted[pick]);
    }
    return centers;
}

}  // namespace

GmmParams fit_gmm_1d(const std::vector<double>& values, int k, std::uint64_t seed, double tol,
                     int max_iter) {
    if (k < 2 || k > kMaxComponents)
        throw std::invalid_argument("fit_gmm_1d: k outside [2, " +
                                    std::to_string(kMaxComponents) + "]");
    if (static_cast<int>(values.size()) < k)
        throw std::invalid_argument("fit_gmm_1d: fewer values than components");
    if (!(tol > 0.0) || max_iter < 1)
        throw std::invalid_argument("fit_gmm_1d: bad tolerance or iteration cap");

    // Sorting makes the fit a function of the multiset, not the input order.
    std::vector<double> xs = values;
    std::sort(xs.begin(), xs.end());
    const std::size_t n = xs.size();
    const double mean_all = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(n);
    double var_all = 0.0;
    for (double x : xs) var_all += (x - mean_all) * (x - mean_all);
    var_all = std::max(var_all / static_cast<double>(n), kVarianceFloor);

    rng::Stream rs(rng::derive_seed(seed, fnv1a64("gmm-init")));
    GmmParams p;
    p.k = k;
    p.means = seed_centers(xs, k, rs);
    p.weights.assign(static_cast<std::size_t>(k), 1.0 / static_cast<double>(k));
    p.variances.assign(static_cast<std::size_t>(k), var_all);

    std::vector<double> resp(n * static_cast<std::size_t>(k));
    auto at = [&](std::size_t i, int c) -> double& {
        return resp[i * static_cast<std::size_t>(k) + static_cast<std::size_t>(c)];
    };
    // E step in log domain; leaves responsibilities in `resp`, returns the
    // log-likelihood of the current parameters.
    auto e_step = [&]() {
        double ll = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double mx = -1e300;
            for (int c = 0; c < k; ++c) {
                at(i, c) = std::log(p.weights[static_cast<std::size_t>(c)]) +
                           log_normal_pdf(xs[i], p.means[static_cast<std::size_t>(c)],
                                          p.variances[static_cast<std::size_t>(c)]);
                mx = std::max(mx, at(i, c));
            }
            double z = 0.0;
            for (int c = 0; c < k; ++c) z += std::exp(at(i, c) - mx);
            const double lse = mx + std::log(z);
            ll += lse;
            for (int c = 0; c < k; ++c) at(i, c) = std::exp(at(i, c) - lse);
        }
        return ll;
    };
    auto m_step = [&]() {
        for (int c = 0; c < k; ++c) {
            double nk = 0.0, sx = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                nk += at(i, c);
                sx += at(i, c) * xs[i];
            }
            if (nk < 1e-12) {  // deserted component: keep it where it is, tiny weight
                p.weights[static_cast<std::size_t>(c)] = 1e-12;
                p.variances[static_cast<std::size_t>(c)] =
                    std::max(p.variances[static_cast<std::size_t>(c)], kVarianceFloor);
                continue;
            }
            const double mu = sx / nk;
            double sv = 0.0;
            for (std::size_t i = 0; i < n; ++i) sv += at(i, c) * (xs[i] - mu) * (xs[i] - mu);
            p.weights[static_cast<std::size_t>(c)] = nk / static_cast<double>(n);
            p.means[static_cast<std::size_t>(c)] = mu;
            p.variances[static_cast<std::size_t>(c)] = std::max(sv / nk, kVarianceFloor);
        }
        double wsum = 0.0;
        for (double w : p.weights) wsum += w;
        for (double& w : p.weights) w /= wsum;
    };

    // The final pass is E-only so the reported likelihood always belongs to
    // the returned parameters, including max_iter exits.
    double prev_ll = -1e300;
    for (int iter = 0; iter <= max_iter; ++iter) {
        const double ll = e_step();
        if (ll + 1e-7 < prev_ll)
            throw std::logic_error("fit_gmm_1d: log-likelihood decreased");
        p.log_likelihood = ll;
        const bool converged = iter > 0 && (ll - prev_ll) < tol;
        prev_ll = ll;
        if (converged || iter == max_iter) break;
        m_step();
    }

    // ascending mean order
    std::vector<std::size_t> idx(static_cast<std::size_t>(k));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return p.means[a] < p.means[b]; });
    GmmParams out;
    out.k = k;
    out.log_likelihood = p.log_likelihood;
    for (std::size_t j : idx) {
        out.weights.push_back(p.weights[j]);
        out.means.push_back(p.means[j]);
        out.variances.push_back(p.variances[j]);
    }
    return out;
}

std::vector<double> gmm_features(const GmmParams& p, int k_max) {
    if (p.k < 1 || p.k > k_max)
        throw std::invalid_argument("gmm_features: component count exceeds layout");
    std::vector<double> f(static_cast<std::size_t>(3 * k_max), 0.0);
    for (int c = 0; c < p.k; ++c) {
        f[static_cast<std::size_t>(3 * c + 0)] = p.weights[static_cast<std::size_t>(c)];
        f[static_cast<std::size_t>(3 * c + 1)] = p.means[static_cast<std::size_t>(c)];
        f[static_cast<std::size_t>(3 * c + 2)] = p.variances[static_cast<std::size_t>(c)];
    }
    return f;
}

void validate_mlp_config(const MlpConfig& cfg) {
    if (cfg.n_hidden_layers < 1 || cfg.n_hidden_layers > 3)
        throw std::invalid_argument("mlp config: n_hidden_layers outside [1, 3]");
    if (cfg.width < 64 || cfg.width > 512)
        throw std::invalid_argument("mlp config: width outside [64, 512]");
    if (!(cfg.lr >= 1e-5 && cfg.lr <= 1e-3))
        throw std::invalid_argument("mlp config: lr outside [1e-5, 1e-3]");
    if (!(cfg.dropout >= 0.0 && cfg.dropout <= 0.4))
        throw std::invalid_argument("mlp config: dropout outside [0, 0.4]");
    if (cfg.epochs < 0) throw std::invalid_argument("mlp config: negative epochs");
    if (cfg.n_classes < 2) throw std::invalid_argument("mlp config: need at least 2 classes");
}

nlohmann::json mlp_config_to_json(const MlpConfig& cfg) {
    return nlohmann::json{{"n_hidden_layers", cfg.n_hidden_layers}, {"width", cfg.width},
                          {"lr", cfg.lr},                           {"dropout", cfg.dropout},
                          {"epochs", cfg.epochs},                   {"seed", cfg.seed},
                          {"n_classes", cfg.n_classes}};
}

MlpConfig mlp_config_from_json(const nlohmann::json& j) {
    MlpConfig cfg;
    cfg.n_hidden_layers = j.value("n_hidden_layers", cfg.n_hidden_layers);
    cfg.width = j.value("width", cfg.width);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.dropout = j.value("dropout", cfg.dropout);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.n_classes = j.value("n_classes", cfg.n_classes);
    return cfg;
}

namespace {

ad::ParamStore init_mlp(const MlpConfig& cfg, int in_dim, std::uint64_t seed) {
    rng::Stream rs(rng::derive_seed(seed, fnv1a64("mlp-init")));
    ad::ParamStore ps;
    int d = in_dim;
    for (int i = 0; i < cfg.n_hidden_layers; ++i) {
        const double std = std::sqrt(2.0 / (d + cfg.width));
        ps.add("l" + std::to_string(i) + "_w", Tensor::randn({d, cfg.width}, rs, std));
        ps.add("l" + std::to_string(i) + "_b", Tensor::zeros({cfg.width}));
        d = cfg.width;
    }
    ps.add("head_w", Tensor::randn({d, cfg.n_classes}, rs,
                                   std::sqrt(2.0 / (d + cfg.n_classes))));
    ps.add("head_b", Tensor::zeros({cfg.n_classes}));
    return ps;
}

Value mlp_forward(Tape& tape, const std::vector<Value>& pv, const ad::ParamStore& ps,
                  const MlpConfig& cfg, const std::vector<double>& x, bool training,
                  std::uint64_t drop_seed) {
    Tensor row({1, static_cast<int>(x.size())});
    std::copy(x.begin(), x.end(), row.data.begin());
    Value h = tape.input(std::move(row));
    for (int i = 0; i < cfg.n_hidden_layers; ++i) {
        const std::string l = "l" + std::to_string(i);
        const auto wi = static_cast<std::size_t>(ps.index_of(l + "_w"));
        const auto bi = static_cast<std::size_t>(ps.index_of(l + "_b"));
        h = relu(add_rows(matmul(h, pv[wi]), pv[bi]));
        if (training && cfg.dropout > 0.0)
            h = dropout(h, cfg.dropout,
                        rng::derive_seed(drop_seed, static_cast<std::uint64_t>(i)));
    }
    const auto wi = static_cast<std::size_t>(ps.index_of("head_w"));
    const auto bi = static_cast<std::size_t>(ps.index_of("head_b"));
    return add_rows(matmul(h, pv[wi]), pv[bi]);
}

std::vector<double> eval_logits(const ad::ParamStore& ps, const MlpConfig& cfg,
                                const std::vector<double>& x) {
    Tape tape;
    std::vector<Value> pv;
    pv.reserve(ps.size());
    for (const Tensor& t : ps.tensors) pv.push_back(tape.input(t));
    Value logits = mlp_forward(tape, pv, ps, cfg, x, false, 0);
    const Tensor& lt = tape.val(logits);
    return std::vector<double>(lt.data.begin(), lt.data.end());
}

int argmax_lowest(const std::vector<double>& v) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i)
        if (v[static_cast<std::size_t>(i)] > v[static_cast<std::size_t>(best)]) best = i;
    return best;
}

}  // namespace

MlpTrainResult train_mlp(const MlpConfig& cfg, const std::vector<FeatureExample>& train,
                         const std::vector<FeatureExample>& val, std::uint64_t seed) {
    validate_mlp_config(cfg);
    if (train.empty()) throw std::invalid_argument("train_mlp: empty training data");
    const std::size_t in_dim = train.front().x.size();
    if (in_dim == 0) throw std::invalid_argument("train_mlp: zero-length feature vectors");
    for (const auto& ex : train)
        if (ex.x.size() != in_dim)
            throw std::invalid_argument("train_mlp: inconsistent feature lengths");
    for (const auto& ex : val)
        if (ex.x.size() != in_dim)
            throw std::invalid_argument("train_mlp: inconsistent feature lengths");

    std::set<int> label_set;
    for (const auto& ex : train) label_set.insert(ex.label);
    const std::vector<int> labels(label_set.begin(), label_set.end());
    if (static_cast<int>(labels.size()) > cfg.n_classes)
        throw std::invalid_argument("train_mlp: more labels than configured classes");
    std::map<int, int> cls_of;
    for (std::size_t i = 0; i < labels.size(); ++i) cls_of[labels[i]] = static_cast<int>(i);

    ad::ParamStore params = init_mlp(cfg, static_cast<int>(in_dim), seed);
    ad::AdamConfig adam;
    adam.lr = cfg.lr;

    auto accuracy = [&](const ad::ParamStore& ps) {
        if (val.empty()) return 0.0;
        std::size_t correct = 0;
        for (const auto& ex : val) {
            const int cls = argmax_lowest(eval_logits(ps, cfg, ex.x));
            if (cls < static_cast<int>(labels.size()) &&
                labels[static_cast<std::size_t>(cls)] == ex.label)
                correct += 1;
        }
        return static_cast<double>(correct) / static_cast<double>(val.size());
    };

    MlpTrainResult res;
    ad::ParamStore best = params;
    double best_acc = -1.0;
    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(train.size());
        std::iota(order.begin(), order.end(), 0);
        rng::Stream ors(rng::derive_seed(seed, fnv1a64("mlp-order") ^ static_cast<std::uint64_t>(epoch)));
        rng::shuffle(order, ors);

        double loss_sum = 0.0;
        for (std::size_t k = 0; k < order.size(); ++k) {
            const FeatureExample& ex = train[order[k]];
            Tape tape;
            std::vector<Value> pv;
            pv.reserve(params.size());
            for (const Tensor& t : params.tensors) pv.push_back(tape.input(t, true));
            const std::uint64_t ds = rng::derive_seed(
                seed, fnv1a64("mlp-drop") ^
                          (static_cast<std::uint64_t>(epoch) << 32 | static_cast<std::uint64_t>(k)));
            Value logits = mlp_forward(tape, pv, params, cfg, ex.x, true, ds);
            Value loss = ad::cross_entropy_logits(logits, cls_of.at(ex.label));
            loss_sum += tape.val(loss)[0];
            tape.backward(loss);
            std::vector<Tensor> grads;
            grads.reserve(pv.size());
            for (Value v : pv) grads.push_back(tape.grad(v));
            ad::adam_step(params.tensors, grads, adam, ++step);
        }
        res.history.train_loss.push_back(loss_sum / static_cast<double>(order.size()));
        const double acc = accuracy(params);
        res.history.val_accuracy.push_back(acc);
        if (acc > best_acc) {
            best_acc = acc;
            best = params;
        }
    }

    nlohmann::json jc = mlp_config_to_json(cfg);
    jc["labels"] = labels;
    jc["in_dim"] = in_dim;
    res.checkpoint.model_kind = "gmm_mlp";
    res.checkpoint.config = jc;
    res.checkpoint.params = cfg.epochs > 0 ? best : params;
    return res;
}

std::pair<int, std::vector<double>> predict_mlp(const ad::Checkpoint& chk,
                                                const std::vector<double>& x) {
    const MlpConfig cfg = mlp_config_from_json(chk.config);
    const auto labels = chk.config.at("labels").get<std::vector<int>>();
    const auto in_dim = chk.config.at("in_dim").get<std::size_t>();
    if (x.size() != in_dim)
        throw std::invalid_argument("predict_mlp: feature length mismatch");
    const auto logits = eval_logits(chk.params, cfg, x);

    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    std::vector<double> probs(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp(logits[i] - mx);
        z += probs[i];
    }
    for (double& p : probs) p /= z;

    const int cls = argmax_lowest(logits);
    const int label = cls < static_cast<int>(labels.size())
                          ? labels[static_cast<std::size_t>(cls)]
                          : cls;
    return {label, probs};
}

}  // namespace flowloc::gmm
