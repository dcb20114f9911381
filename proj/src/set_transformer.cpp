#include "flowloc/set_transformer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include "flowloc/util.hpp"

namespace flowloc::st {

using ad::Tensor;
using ad::Value;

void validate_config(const STConfig& cfg) {
    if (cfg.d_hidden < 1 || cfg.n_heads < 1 || cfg.m_inducing < 1 || cfg.k_seeds < 1)
        throw std::invalid_argument("st config: dimensions must be positive");
    if (cfg.d_hidden % cfg.n_heads != 0)
        throw std::invalid_argument("st config: d_hidden must be divisible by n_heads");
    if (!(cfg.dropout_p >= 0.0 && cfg.dropout_p <= 0.5))
        throw std::invalid_argument("st config: dropout_p outside [0, 0.5]");
    if (!(cfg.lr > 0.0) || cfg.weight_decay < 0.0)
        throw std::invalid_argument("st config: bad optimizer settings");
    if (cfg.epochs < 0) throw std::invalid_argument("st config: negative epochs");
    if (cfg.n_classes < 2) throw std::invalid_argument("st config: need at least 2 classes");
}

namespace {

void add_mab_params(ad::ParamStore& ps, const std::string& prefix, int d, rng::Stream& rs) {
    const double w_std = std::sqrt(2.0 / (d + d));
    auto w = [&] { return Tensor::randn({d, d}, rs, w_std); };
    ps.add(prefix + ".wq", w());
    ps.add(prefix + ".bq", Tensor::zeros({d}));
    ps.add(prefix + ".wk", w());
    ps.add(prefix + ".bk", Tensor::zeros({d}));
    ps.add(prefix + ".wv", w());
    ps.add(prefix + ".bv", Tensor::zeros({d}));
    ps.add(prefix + ".wo", w());
    ps.add(prefix + ".bo", Tensor::zeros({d}));
    ps.add(prefix + ".ln1_g", Tensor::full({d}, 1.0));
    ps.add(prefix + ".ln1_b", Tensor::zeros({d}));
    ps.add(prefix + ".ff_w1", w());
    ps.add(prefix + ".ff_b1", Tensor::zeros({d}));
    ps.add(prefix + ".ff_w2", w());
    ps.add(prefix + ".ff_b2", Tensor::zeros({d}));
    ps.add(prefix + ".ln2_g", Tensor::full({d}, 1.0));
    ps.add(prefix + ".ln2_b", Tensor::zeros({d}));
}

}  // namespace

ad::ParamStore init_params(const STConfig& cfg, std::uint64_t seed) {
    validate_config(cfg);
    rng::Stream rs(rng::derive_seed(seed, fnv1a64("st-init")));
    const int d = cfg.d_hidden;
    ad::ParamStore ps;
    ps.add("in.w", Tensor::randn({1, d}, rs, 1.0));
    ps.add("in.b", Tensor::zeros({d}));
    const double pt_std = 1.0 / std::sqrt(static_cast<double>(d));
    ps.add("isab1.I", Tensor::randn({cfg.m_inducing, d}, rs, pt_std));
    add_mab_params(ps, "isab1.mab1", d, rs);
    add_mab_params(ps, "isab1.mab2", d, rs);
    ps.add("isab2.I", Tensor::randn({cfg.m_inducing, d}, rs, pt_std));
    add_mab_params(ps, "isab2.mab1", d, rs);
    add_mab_params(ps, "isab2.mab2", d, rs);
    ps.add("pma.S", Tensor::randn({cfg.k_seeds, d}, rs, pt_std));
    const double ff_std = std::sqrt(2.0 / (d + d));
    ps.add("pma.ff_w1", Tensor::randn({d, d}, rs, ff_std));
    ps.add("pma.ff_b1", Tensor::zeros({d}));
    ps.add("pma.ff_w2", Tensor::randn({d, d}, rs, ff_std));
    ps.add("pma.ff_b2", Tensor::zeros({d}));
    add_mab_params(ps, "pma.mab", d, rs);
    add_mab_params(ps, "dec.mab", d, rs);
    ps.add("head.w", Tensor::randn({d, cfg.n_classes}, rs,
                                   std::sqrt(2.0 / (d + cfg.n_classes))));
    ps.add("head.b", Tensor::zeros({cfg.n_classes}));
    return ps;
}

namespace {

Value pval(const BlockCtx& ctx, const std::string& name) {
    const int i = ctx.store->index_of(name);
    if (i < 0) throw std::out_of_range("missing parameter " + name);
    return (*ctx.pv)[static_cast<std::size_t>(i)];
}

Value maybe_dropout(const BlockCtx& ctx, Value x) {
    if (!ctx.training || ctx.dropout_p <= 0.0) return x;
    const std::uint64_t s = rng::derive_seed(ctx.seed, fnv1a64("drop") ^ ctx.drop_counter++);
    return dropout(x, ctx.dropout_p, s);
}

Value linear(const BlockCtx& ctx, Value x, const std::string& w, const std::string& b) {
    return add_rows(matmul(x, pval(ctx, w)), pval(ctx, b));
}

}  // namespace

Value mab(const BlockCtx& ctx, Value x, Value y, const std::string& prefix) {
    const int d = ctx.cfg->d_hidden;
    const int h = ctx.cfg->n_heads;
    const int dh = d / h;
    Value q = linear(ctx, x, prefix + ".wq", prefix + ".bq");
    Value k = linear(ctx, y, prefix + ".wk", prefix + ".bk");
    Value v = linear(ctx, y, prefix + ".wv", prefix + ".bv");

    Value heads;  // concat of per-head attention outputs
    for (int i = 0; i < h; ++i) {
        Value qh = slice(q, 1, i * dh, dh);
        Value kh = slice(k, 1, i * dh, dh);
        Value vh = slice(v, 1, i * dh, dh);
        Value scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(double(dh)));
        Value oh = matmul(softmax(scores, 1), vh);
        heads = (i == 0) ? oh : concat(heads, oh, 1);
    }
    Value attn = maybe_dropout(ctx, linear(ctx, heads, prefix + ".wo", prefix + ".bo"));
    Value hmid = layer_norm_affine(add(x, attn), 1, pval(ctx, prefix + ".ln1_g"),
                                   pval(ctx, prefix + ".ln1_b"));
    Value ff = maybe_dropout(
        ctx, relu(linear(ctx, hmid, prefix + ".ff_w1", prefix + ".ff_b1")));
    ff = add_rows(matmul(ff, pval(ctx, prefix + ".ff_w2")), pval(ctx, prefix + ".ff_b2"));
    return layer_norm_affine(add(hmid, ff), 1, pval(ctx, prefix + ".ln2_g"),
                             pval(ctx, prefix + ".ln2_b"));
}

Value sab(const BlockCtx& ctx, Value x, const std::string& prefix) {
    return mab(ctx, x, x, prefix);
}

Value isab(const BlockCtx& ctx, Value x, const std::string& prefix) {
    Value inducing = pval(ctx, prefix + ".I");
    Value h = mab(ctx, inducing, x, prefix + ".mab1");
    return mab(ctx, x, h, prefix + ".mab2");
}

Value pma(const BlockCtx& ctx, Value z, const std::string& prefix) {
    Value ff = relu(linear(ctx, z, prefix + ".ff_w1", prefix + ".ff_b1"));
    ff = add_rows(matmul(ff, pval(ctx, prefix + ".ff_w2")), pval(ctx, prefix + ".ff_b2"));
    return mab(ctx, pval(ctx, prefix + ".S"), ff, prefix + ".mab");
}

Value forward(ad::Tape& tape, const std::vector<Value>& pv, const ad::ParamStore& store,
              const STConfig& cfg, const std::vector<double>& set_values, bool training,
              std::uint64_t dropout_seed) {
    if (set_values.empty()) throw std::invalid_argument("forward: empty set");
    BlockCtx ctx{&store, &pv, &cfg, training, cfg.dropout_p, dropout_seed, 0};

    Tensor col({static_cast<int>(set_values.size()), 1});
    std::copy(set_values.begin(), set_values.end(), col.data.begin());
    Value x = linear(ctx, tape.input(std::move(col)), "in.w", "in.b");
    x = isab(ctx, x, "isab1");
    x = isab(ctx, x, "isab2");
    x = pma(ctx, x, "pma");
    x = sab(ctx, x, "dec.mab");
    return linear(ctx, x, "head.w", "head.b");  // [k_seeds, n_classes]
}

std::vector<double> forward_logits(const ad::ParamStore& store, const STConfig& cfg,
                                   const std::vector<double>& set_values) {
    ad::Tape tape;
    std::vector<Value> pv;
    pv.reserve(store.size());
    for (const Tensor& t : store.tensors) pv.push_back(tape.input(t, false));
    Value logits = forward(tape, pv, store, cfg, set_values, false, 0);
    const Tensor& lt = tape.val(logits);
    return std::vector<double>(lt.data.begin(), lt.data.begin() + cfg.n_classes);
}

nlohmann::json config_to_json(const STConfig& cfg) {
    return nlohmann::json{{"d_hidden", cfg.d_hidden},
                          {"n_heads", cfg.n_heads},
                          {"m_inducing", cfg.m_inducing},
                          {"k_seeds", cfg.k_seeds},
                          {"dropout_p", cfg.dropout_p},
                          {"lr", cfg.lr},
                          {"weight_decay", cfg.weight_decay},
                          {"amsgrad", cfg.amsgrad},
                          {"epochs", cfg.epochs},
                          {"n_classes", cfg.n_classes}};
}

STConfig config_from_json(const nlohmann::json& j) {
    STConfig cfg;
    cfg.d_hidden = j.value("d_hidden", cfg.d_hidden);
    cfg.n_heads = j.value("n_heads", cfg.n_heads);
    cfg.m_inducing = j.value("m_inducing", cfg.m_inducing);
    cfg.k_seeds = j.value("k_seeds", cfg.k_seeds);
    cfg.dropout_p = j.value("dropout_p", cfg.dropout_p);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    cfg.amsgrad = j.value("amsgrad", cfg.amsgrad);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.n_classes = j.value("n_classes", cfg.n_classes);
    return cfg;
}

namespace {

std::vector<int> sorted_labels(const data::Dataset& ds) {
    std::set<int> s;
    for (const auto& set : ds.sets) s.insert(set.label);
    return std::vector<int>(s.begin(), s.end());
}

int argmax_lowest(const std::vector<double>& v) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i)
        if (v[static_cast<std::size_t>(i)] > v[static_cast<std::size_t>(best)]) best = i;
    return best;
}

}  // namespace

TrainResult train(const STConfig& cfg, const data::Dataset& train_ds,
                  const data::Dataset& val_ds, std::uint64_t seed) {
    validate_config(cfg);
    const std::vector<int> labels = sorted_labels(train_ds);
    if (static_cast<int>(labels.size()) > cfg.n_classes)
        throw std::invalid_argument("train: more labels than configured classes");
    std::map<int, int> class_of;
    for (std::size_t i = 0; i < labels.size(); ++i) class_of[labels[i]] = static_cast<int>(i);

    std::vector<std::size_t> trainable;
    for (std::size_t i = 0; i < train_ds.sets.size(); ++i)
        if (!train_ds.sets[i].values.empty()) trainable.push_back(i);
    if (trainable.empty()) throw std::runtime_error("train: no trainable sets");

    ad::ParamStore params = init_params(cfg, seed);
    ad::AdamConfig adam;
    adam.lr = cfg.lr;
    adam.weight_decay = cfg.weight_decay;
    adam.amsgrad = cfg.amsgrad;

    auto eval_accuracy = [&](const ad::ParamStore& ps) {
        std::size_t total = 0, correct = 0;
        for (const auto& s : val_ds.sets) {
            if (s.values.empty()) continue;
            total += 1;
            const auto logits = forward_logits(ps, cfg, s.values);
            const int cls = argmax_lowest(logits);
            if (cls < static_cast<int>(labels.size()) && labels[static_cast<std::size_t>(cls)] == s.label)
                correct += 1;
        }
        return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
    };

    TrainResult result;
    result.history.train_loss.reserve(static_cast<std::size_t>(cfg.epochs));
    result.history.val_accuracy.reserve(static_cast<std::size_t>(cfg.epochs));
    ad::ParamStore best_params = params;
    double best_acc = -1.0;
    long step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr_e = ad::cosine_lr(epoch, std::max(cfg.epochs, 1), cfg.lr);
        adam.lr = lr_e;
        std::vector<std::size_t> order = trainable;
        rng::Stream shuffle_rs(rng::derive_seed(
            seed, fnv1a64("epoch-order") ^ static_cast<std::uint64_t>(epoch)));
        rng::shuffle(order, shuffle_rs);

        double loss_sum = 0.0;
        for (std::size_t k = 0; k < order.size(); ++k) {
            const data::SampleSet& s = train_ds.sets[order[k]];
            ad::Tape tape;
            std::vector<Value> pv;
            pv.reserve(params.size());
            for (const Tensor& t : params.tensors) pv.push_back(tape.input(t, true));
            const std::uint64_t drop_seed = rng::derive_seed(
                seed, fnv1a64("dropout") ^
                          (static_cast<std::uint64_t>(epoch) << 32 | static_cast<std::uint64_t>(k)));
            Value logits = forward(tape, pv, params, cfg, s.values, true, drop_seed);
            Value loss = ad::cross_entropy_logits(logits, class_of.at(s.label));
            loss_sum += tape.val(loss)[0];
            tape.backward(loss);
            std::vector<Tensor> grads;
            grads.reserve(pv.size());
            for (Value v : pv) grads.push_back(tape.grad(v));
            ad::adam_step(params.tensors, grads, adam, ++step);
        }
        result.history.train_loss.push_back(loss_sum / static_cast<double>(order.size()));

        const double acc = eval_accuracy(params);
        result.history.val_accuracy.push_back(acc);
        if (acc > best_acc) {
            best_acc = acc;
            best_params = params;
        }
    }

    nlohmann::json chk_cfg = config_to_json(cfg);
    chk_cfg["labels"] = labels;
    result.checkpoint.model_kind = "set_transformer";
    result.checkpoint.config = chk_cfg;
    result.checkpoint.norm = train_ds.norm;
    result.checkpoint.params = cfg.epochs > 0 ? best_params : params;
    return result;
}

std::pair<int, std::vector<double>> predict(const ad::Checkpoint& chk,
                                            const std::vector<double>& raw_values) {
    if (raw_values.empty()) throw std::invalid_argument("predict: empty set");
    const STConfig cfg = config_from_json(chk.config);
    std::vector<int> labels = chk.config.at("labels").get<std::vector<int>>();
    std::vector<double> values = raw_values;
    if (chk.norm)
        for (double& v : values) v = data::normalize_value(v, *chk.norm);
    const std::vector<double> logits = forward_logits(chk.params, cfg, values);

    // softmax over logits for reported probabilities
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

}  // namespace flowloc::st
