#include "flowloc/generative.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>

#include "flowloc/autodiff.hpp"
#include "flowloc/rng.hpp"
#include "flowloc/util.hpp"

namespace flowloc::gen {

using ad::ParamStore;
using ad::Tape;
using ad::Tensor;
using ad::Value;

std::string kind_name(GenKind k) {
    switch (k) {
        case GenKind::cgan: return "cgan";
        case GenKind::cvae: return "cvae";
        case GenKind::wgan: return "wgan";
    }
    throw std::logic_error("unhandled generator kind");
}

GenKind kind_from_name(const std::string& name) {
    if (name == "cgan") return GenKind::cgan;
    if (name == "cvae") return GenKind::cvae;
    if (name == "wgan") return GenKind::wgan;
    throw std::invalid_argument("unknown generator kind: " + name);
}

std::string augment_name(AugmentStrategy s) {
    switch (s) {
        case AugmentStrategy::none: return "none";
        case AugmentStrategy::fixed: return "fixed";
        case AugmentStrategy::random: return "random";
    }
    throw std::logic_error("unhandled augmentation strategy");
}

AugmentStrategy augment_from_name(const std::string& name) {
    if (name == "none") return AugmentStrategy::none;
    if (name == "fixed") return AugmentStrategy::fixed;
    if (name == "random") return AugmentStrategy::random;
    throw std::invalid_argument("unknown augmentation strategy: " + name);
}

void validate_gen_config(const GenConfig& cfg) {
    if (cfg.hidden_width < 32 || cfg.hidden_width > 256)
        throw std::invalid_argument("gen config: hidden_width outside [32, 256]");
    if (cfg.n_layers < 1 || cfg.n_layers > 3)
        throw std::invalid_argument("gen config: n_layers outside [1, 3]");
    if (!(cfg.lr >= 1e-5 && cfg.lr <= 1e-3))
        throw std::invalid_argument("gen config: lr outside [1e-5, 1e-3]");
    if (cfg.latent_dim < 2 || cfg.latent_dim > 16)
        throw std::invalid_argument("gen config: latent_dim outside [2, 16]");
    if (cfg.label_embed_dim < 4 || cfg.label_embed_dim > 16)
        throw std::invalid_argument("gen config: label_embed_dim outside [4, 16]");
    if (!(cfg.clip_c > 0.0)) throw std::invalid_argument("gen config: clip_c must be positive");
    if (cfg.n_critic < 1) throw std::invalid_argument("gen config: n_critic must be >= 1");
    if (cfg.epochs < 0) throw std::invalid_argument("gen config: negative epochs");
    if (cfg.batch_size < 1) throw std::invalid_argument("gen config: batch_size must be >= 1");
    if (cfg.n_classes < 1) throw std::invalid_argument("gen config: n_classes must be >= 1");
}

nlohmann::json gen_config_to_json(const GenConfig& cfg) {
    return nlohmann::json{{"kind", kind_name(cfg.kind)},
                          {"hidden_width", cfg.hidden_width},
                          {"n_layers", cfg.n_layers},
                          {"lr", cfg.lr},
                          {"latent_dim", cfg.latent_dim},
                          {"label_embed_dim", cfg.label_embed_dim},
                          {"clip_c", cfg.clip_c},
                          {"n_critic", cfg.n_critic},
                          {"epochs", cfg.epochs},
                          {"batch_size", cfg.batch_size},
                          {"n_classes", cfg.n_classes},
                          {"seed", cfg.seed}};
}

GenConfig gen_config_from_json(const nlohmann::json& j) {
    GenConfig cfg;
    cfg.kind = kind_from_name(j.value("kind", kind_name(cfg.kind)));
    cfg.hidden_width = j.value("hidden_width", cfg.hidden_width);
    cfg.n_layers = j.value("n_layers", cfg.n_layers);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.latent_dim = j.value("latent_dim", cfg.latent_dim);
    cfg.label_embed_dim = j.value("label_embed_dim", cfg.label_embed_dim);
    cfg.clip_c = j.value("clip_c", cfg.clip_c);
    cfg.n_critic = j.value("n_critic", cfg.n_critic);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.n_classes = j.value("n_classes", cfg.n_classes);
    cfg.seed = j.value("seed", cfg.seed);
    return cfg;
}

double wgan_critic_objective(const std::vector<double>& c_real,
                             const std::vector<double>& c_fake) {
    if (c_real.empty() || c_fake.empty())
        throw std::invalid_argument("critic objective needs non-empty outputs");
    double mr = 0.0, mf = 0.0;
    for (double v : c_real) mr += v;
    for (double v : c_fake) mf += v;
    return mf / static_cast<double>(c_fake.size()) - mr / static_cast<double>(c_real.size());
}

namespace {

// ---- shared MLP plumbing -------------------------------------------------

// Hidden stack prefix.l{i}_{w,b}; the output head is added separately so the
// encoder can hang two heads off one stack.
void add_stack(ParamStore& ps, const std::string& prefix, int in_dim, int hidden, int n_layers,
               rng::Stream& rs) {
    int d_in = in_dim;
    for (int i = 0; i < n_layers; ++i) {
        const double std = std::sqrt(2.0 / (d_in + hidden));
        ps.add(prefix + ".l" + std::to_string(i) + "_w", Tensor::randn({d_in, hidden}, rs, std));
        ps.add(prefix + ".l" + std::to_string(i) + "_b", Tensor::zeros({hidden}));
        d_in = hidden;
    }
}

void add_head(ParamStore& ps, const std::string& name, int hidden, int out, rng::Stream& rs) {
    ps.add(name + "_w", Tensor::randn({hidden, out}, rs, std::sqrt(2.0 / (hidden + out))));
    ps.add(name + "_b", Tensor::zeros({out}));
}

struct NetCtx {
    const ParamStore* store;
    const std::vector<Value>* pv;
};

Value pval(const NetCtx& ctx, const std::string& name) {
    const int i = ctx.store->index_of(name);
    if (i < 0) throw std::out_of_range("missing parameter " + name);
    return (*ctx.pv)[static_cast<std::size_t>(i)];
}

Value stack_forward(const NetCtx& ctx, Value x, const std::string& prefix, int n_layers) {
    for (int i = 0; i < n_layers; ++i) {
        const std::string l = prefix + ".l" + std::to_string(i);
        x = relu(add_rows(matmul(x, pval(ctx, l + "_w")), pval(ctx, l + "_b")));
    }
    return x;
}

Value head_forward(const NetCtx& ctx, Value h, const std::string& name) {
    return add_rows(matmul(h, pval(ctx, name + "_w")), pval(ctx, name + "_b"));
}

// ---- dataset flattening ----------------------------------------------------

struct FlatData {
    std::vector<double> xs;     // normalized values
    std::vector<int> cls;       // class indices aligned with xs
    std::vector<int> labels;    // sorted unique labels; row i embeds labels[i]
};

FlatData flatten(const GenConfig& cfg, const data::Dataset& d) {
    std::set<int> label_set;
    for (const auto& s : d.sets)
        if (!s.values.empty()) label_set.insert(s.label);
    FlatData f;
    f.labels.assign(label_set.begin(), label_set.end());
    if (f.labels.empty()) throw std::invalid_argument("train: dataset has no values");
    if (static_cast<int>(f.labels.size()) > cfg.n_classes)
        throw std::invalid_argument("train: more labels than configured classes");
    std::map<int, int> cls_of;
    for (std::size_t i = 0; i < f.labels.size(); ++i) cls_of[f.labels[i]] = static_cast<int>(i);
    for (const auto& s : d.sets)
        for (double v : s.values) {
            f.xs.push_back(v);
            f.cls.push_back(cls_of.at(s.label));
        }
    return f;
}

struct Batch {
    Tensor x;                 // [B, 1]
    std::vector<int> cls;     // [B]
};

Batch gather_batch(const FlatData& f, const std::vector<std::size_t>& order, std::size_t begin,
                   std::size_t end) {
    Batch b;
    const int n = static_cast<int>(end - begin);
    b.x = Tensor::zeros({n, 1});
    b.cls.reserve(static_cast<std::size_t>(n));
    for (std::size_t k = begin; k < end; ++k) {
        b.x.data[k - begin] = f.xs[order[k]];
        b.cls.push_back(f.cls[order[k]]);
    }
    return b;
}

// ---- parameter initialization ----------------------------------------------

ParamStore init_gan_params(const GenConfig& cfg, std::uint64_t seed, bool critic_linear) {
    (void)critic_linear;  // same shapes either way; the loss decides the head's meaning
    rng::Stream rs(rng::derive_seed(seed, fnv1a64("gen-init")));
    const double emb_std = 1.0 / std::sqrt(static_cast<double>(cfg.label_embed_dim));
    ParamStore ps;
    ps.add("g.emb", Tensor::randn({cfg.n_classes, cfg.label_embed_dim}, rs, emb_std));
    add_stack(ps, "g", cfg.latent_dim + cfg.label_embed_dim, cfg.hidden_width, cfg.n_layers, rs);
    add_head(ps, "g.out", cfg.hidden_width, 1, rs);
    ps.add("d.emb", Tensor::randn({cfg.n_classes, cfg.label_embed_dim}, rs, emb_std));
    add_stack(ps, "d", 1 + cfg.label_embed_dim, cfg.hidden_width, cfg.n_layers, rs);
    add_head(ps, "d.out", cfg.hidden_width, 1, rs);
    return ps;
}

ParamStore init_vae_params(const GenConfig& cfg, std::uint64_t seed) {
    rng::Stream rs(rng::derive_seed(seed, fnv1a64("gen-init")));
    const double emb_std = 1.0 / std::sqrt(static_cast<double>(cfg.label_embed_dim));
    ParamStore ps;
    ps.add("emb", Tensor::randn({cfg.n_classes, cfg.label_embed_dim}, rs, emb_std));
    add_stack(ps, "enc", 1 + cfg.label_embed_dim, cfg.hidden_width, cfg.n_layers, rs);
    add_head(ps, "enc.mu", cfg.hidden_width, cfg.latent_dim, rs);
    add_head(ps, "enc.lv", cfg.hidden_width, cfg.latent_dim, rs);
    add_stack(ps, "dec", cfg.latent_dim + cfg.label_embed_dim, cfg.hidden_width, cfg.n_layers, rs);
    add_head(ps, "dec.out", cfg.hidden_width, 1, rs);
    return ps;
}

// Generator forward shared by the two adversarial variants: latent plus label
// embedding through the stack, squashed into (0,1).
Value generator_forward(const NetCtx& ctx, const GenConfig& cfg, Value z,
                        const std::vector<int>& cls) {
    Value e = embed(pval(ctx, "g.emb"), cls);
    Value h = stack_forward(ctx, concat(z, e, 1), "g", cfg.n_layers);
    return sigmoid(head_forward(ctx, h, "g.out"));
}

Value discriminator_forward(const NetCtx& ctx, const GenConfig& cfg, Value x,
                            const std::vector<int>& cls) {
    Value e = embed(pval(ctx, "d.emb"), cls);
    Value h = stack_forward(ctx, concat(x, e, 1), "d", cfg.n_layers);
    return head_forward(ctx, h, "d.out");  // logit / critic score
}

bool is_gen_param(const std::string& name) { return name.rfind("g.", 0) == 0; }

// Pushes store tensors onto a fresh tape, flagging only the selected side as
// trainable so the other side is held fixed for this step.
std::vector<Value> push_params(Tape& tape, const ParamStore& ps, bool train_gen_side,
                               bool train_disc_side) {
    std::vector<Value> pv;
    pv.reserve(ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const bool gen_side = is_gen_param(ps.names[i]);
        pv.push_back(tape.input(ps.tensors[i], gen_side ? train_gen_side : train_disc_side));
    }
    return pv;
}

void step_side(Tape& tape, const std::vector<Value>& pv, ParamStore& ps, bool gen_side,
               ad::AdamConfig& adam, long t) {
    std::vector<Tensor*> params;
    std::vector<Tensor> grads;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        if (is_gen_param(ps.names[i]) != gen_side) continue;
        params.push_back(&ps.tensors[i]);
        grads.push_back(tape.grad(pv[i]));
    }
    std::vector<Tensor> held;
    held.reserve(params.size());
    for (Tensor* p : params) held.push_back(*p);
    ad::adam_step(held, grads, adam, t);
    for (std::size_t i = 0; i < params.size(); ++i) *params[i] = held[i];
}

void clip_side(ParamStore& ps, bool gen_side, double c) {
    for (std::size_t i = 0; i < ps.size(); ++i) {
        if (is_gen_param(ps.names[i]) != gen_side) continue;
        for (double& v : ps.tensors[i].data) v = std::clamp(v, -c, c);
    }
}

ad::Checkpoint make_checkpoint(const GenConfig& cfg, const FlatData& f, ParamStore params,
                               const data::Dataset& d) {
    nlohmann::json jc = gen_config_to_json(cfg);
    jc["labels"] = f.labels;
    ad::Checkpoint chk;
    chk.model_kind = kind_name(cfg.kind);
    chk.config = std::move(jc);
    chk.norm = d.norm;
    chk.params = std::move(params);
    return chk;
}

Tensor noise(int n, int dim, rng::Stream& rs) {
    return Tensor::randn({n, dim}, rs, 1.0);
}

}  // namespace

GenTrainResult train_cgan(const GenConfig& cfg, const data::Dataset& d, std::uint64_t seed) {
    validate_gen_config(cfg);
    const FlatData f = flatten(cfg, d);
    ParamStore params = init_gan_params(cfg, seed, false);
    ad::AdamConfig adam_g, adam_d;
    adam_g.lr = adam_d.lr = cfg.lr;
    rng::Stream zrs(rng::derive_seed(seed, fnv1a64("gen-noise")));

    GenTrainResult res;
    long tg = 0, td = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(f.xs.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng::Stream ors(rng::derive_seed(seed, fnv1a64("gen-order") ^ static_cast<std::uint64_t>(epoch)));
        rng::shuffle(order, ors);

        double dl_sum = 0.0, gl_sum = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
            const Batch b = gather_batch(f, order, begin, end);
            const int n = b.x.shape[0];

            {  // discriminator step: generator side frozen
                Tape tape;
                std::vector<Value> pv = push_params(tape, params, false, true);
                NetCtx ctx{&params, &pv};
                Value fake = generator_forward(ctx, cfg, tape.input(noise(n, cfg.latent_dim, zrs)), b.cls);
                Value lr_real = discriminator_forward(ctx, cfg, tape.input(b.x), b.cls);
                Value lr_fake = discriminator_forward(ctx, cfg, fake, b.cls);
                Value loss = add(mean(softplus(scale(lr_real, -1.0))), mean(softplus(lr_fake)));
                dl_sum += tape.val(loss)[0];
                tape.backward(loss);
                step_side(tape, pv, params, false, adam_d, ++td);
            }
            {  // generator step: discriminator side frozen, non-saturating loss
                Tape tape;
                std::vector<Value> pv = push_params(tape, params, true, false);
                NetCtx ctx{&params, &pv};
                Value fake = generator_forward(ctx, cfg, tape.input(noise(n, cfg.latent_dim, zrs)), b.cls);
                Value lr_fake = discriminator_forward(ctx, cfg, fake, b.cls);
                Value loss = mean(softplus(scale(lr_fake, -1.0)));
                gl_sum += tape.val(loss)[0];
                tape.backward(loss);
                step_side(tape, pv, params, true, adam_g, ++tg);
            }
            n_batches += 1;
        }
        res.history.loss_d.push_back(dl_sum / static_cast<double>(n_batches));
        res.history.loss_g.push_back(gl_sum / static_cast<double>(n_batches));
    }
    res.checkpoint = make_checkpoint(cfg, f, std::move(params), d);
    return res;
}

GenTrainResult train_cvae(const GenConfig& cfg, const data::Dataset& d, std::uint64_t seed) {
    validate_gen_config(cfg);
    const FlatData f = flatten(cfg, d);
    ParamStore params = init_vae_params(cfg, seed);
    ad::AdamConfig adam;
    adam.lr = cfg.lr;

    GenTrainResult res;
    long t = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(f.xs.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng::Stream ors(rng::derive_seed(seed, fnv1a64("gen-order") ^ static_cast<std::uint64_t>(epoch)));
        rng::shuffle(order, ors);

        double loss_sum = 0.0, kl_sum = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
            const Batch b = gather_batch(f, order, begin, end);
            const double inv_n = 1.0 / static_cast<double>(b.x.shape[0]);

            Tape tape;
            std::vector<Value> pv;
            pv.reserve(params.size());
            for (const Tensor& pt : params.tensors) pv.push_back(tape.input(pt, true));
            NetCtx ctx{&params, &pv};

            Value e = embed(pval(ctx, "emb"), b.cls);
            Value x = tape.input(b.x);
            Value h = stack_forward(ctx, concat(x, e, 1), "enc", cfg.n_layers);
            Value mu = head_forward(ctx, h, "enc.mu");
            Value lv = head_forward(ctx, h, "enc.lv");
            Value sigma = exp_op(scale(lv, 0.5));
            const std::uint64_t zseed = rng::derive_seed(
                seed, fnv1a64("gen-reparam") ^
                          (static_cast<std::uint64_t>(epoch) << 32 | static_cast<std::uint64_t>(n_batches)));
            Value z = gaussian_sample(mu, sigma, zseed);
            Value hd = stack_forward(ctx, concat(z, e, 1), "dec", cfg.n_layers);
            Value xhat = sigmoid(head_forward(ctx, hd, "dec.out"));

            Value diff = sub(x, xhat);
            Value recon = scale(sum(multiply(diff, diff)), 0.5 * inv_n);
            // 0.5 * (mu^2 + exp(lv) - 1 - lv), summed over latent, averaged over batch
            Value kl_terms = affine(sub(add(multiply(mu, mu), exp_op(lv)), lv), 0.5, -0.5);
            Value kl = scale(sum(kl_terms), inv_n);
            Value loss = add(recon, kl);

            loss_sum += tape.val(loss)[0];
            kl_sum += tape.val(kl)[0];
            tape.backward(loss);
            std::vector<Tensor> grads;
            grads.reserve(pv.size());
            for (Value v : pv) grads.push_back(tape.grad(v));
            ad::adam_step(params.tensors, grads, adam, ++t);
            n_batches += 1;
        }
        res.history.loss_g.push_back(loss_sum / static_cast<double>(n_batches));
        res.history.loss_d.push_back(kl_sum / static_cast<double>(n_batches));
    }
    res.checkpoint = make_checkpoint(cfg, f, std::move(params), d);
    return res;
}

GenTrainResult train_wgan(const GenConfig& cfg, const data::Dataset& d, std::uint64_t seed) {
    validate_gen_config(cfg);
    const FlatData f = flatten(cfg, d);
    ParamStore params = init_gan_params(cfg, seed, true);
    ad::AdamConfig adam_g, adam_c;
    adam_g.lr = adam_c.lr = cfg.lr;
    rng::Stream zrs(rng::derive_seed(seed, fnv1a64("gen-noise")));

    auto generator_step = [&](const Batch& b, long& tg) {
        Tape tape;
        std::vector<Value> pv = push_params(tape, params, true, false);
        NetCtx ctx{&params, &pv};
        Value fake = generator_forward(ctx, cfg, tape.input(noise(b.x.shape[0], cfg.latent_dim, zrs)), b.cls);
        Value loss = scale(mean(discriminator_forward(ctx, cfg, fake, b.cls)), -1.0);
        const double out = tape.val(loss)[0];
        tape.backward(loss);
        step_side(tape, pv, params, true, adam_g, ++tg);
        return out;
    };

    GenTrainResult res;
    long tg = 0, tc = 0;
    long critic_steps = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(f.xs.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng::Stream ors(rng::derive_seed(seed, fnv1a64("gen-order") ^ static_cast<std::uint64_t>(epoch)));
        rng::shuffle(order, ors);

        double cl_sum = 0.0, gl_sum = 0.0;
        std::size_t n_batches = 0, n_gen = 0;
        Batch last_batch;
        for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
            const Batch b = gather_batch(f, order, begin, end);
            last_batch = b;

            {  // critic step with post-update weight clipping
                Tape tape;
                std::vector<Value> pv = push_params(tape, params, false, true);
                NetCtx ctx{&params, &pv};
                Value fake = generator_forward(ctx, cfg, tape.input(noise(b.x.shape[0], cfg.latent_dim, zrs)), b.cls);
                Value c_real = discriminator_forward(ctx, cfg, tape.input(b.x), b.cls);
                Value c_fake = discriminator_forward(ctx, cfg, fake, b.cls);
                Value loss = sub(mean(c_fake), mean(c_real));
                cl_sum += tape.val(loss)[0];
                tape.backward(loss);
                step_side(tape, pv, params, false, adam_c, ++tc);
                clip_side(params, false, cfg.clip_c);
            }
            critic_steps += 1;
            n_batches += 1;
            if (critic_steps % cfg.n_critic == 0) {
                gl_sum += generator_step(b, tg);
                n_gen += 1;
            }
        }
        if (n_gen == 0 && n_batches > 0) {  // tiny epochs still move the generator
            gl_sum += generator_step(last_batch, tg);
            n_gen = 1;
        }
        res.history.loss_d.push_back(cl_sum / static_cast<double>(n_batches));
        res.history.loss_g.push_back(gl_sum / static_cast<double>(n_gen));
    }
    res.checkpoint = make_checkpoint(cfg, f, std::move(params), d);
    return res;
}

GenTrainResult train_generator(const GenConfig& cfg, const data::Dataset& d, std::uint64_t seed) {
    switch (cfg.kind) {
        case GenKind::cgan: return train_cgan(cfg, d, seed);
        case GenKind::cvae: return train_cvae(cfg, d, seed);
        case GenKind::wgan: return train_wgan(cfg, d, seed);
    }
    throw std::logic_error("unhandled generator kind");
}

std::vector<double> sample(const ad::Checkpoint& chk, int label, int n, std::uint64_t seed) {
    if (n < 0) throw std::invalid_argument("sample: negative count");
    const GenConfig cfg = gen_config_from_json(chk.config);
    const auto labels = chk.config.at("labels").get<std::vector<int>>();
    const auto it = std::find(labels.begin(), labels.end(), label);
    if (it == labels.end())
        throw std::invalid_argument("sample: unknown label " + std::to_string(label));
    if (n == 0) return {};
    const std::vector<int> cls(static_cast<std::size_t>(n),
                               static_cast<int>(it - labels.begin()));

    rng::Stream rs(rng::derive_seed(seed, fnv1a64("gen-sample")));
    Tape tape;
    std::vector<Value> pv;
    pv.reserve(chk.params.size());
    for (const Tensor& t : chk.params.tensors) pv.push_back(tape.input(t));
    NetCtx ctx{&chk.params, &pv};

    Value out;
    if (chk.model_kind == "cvae") {
        Value z = tape.input(Tensor::randn({n, cfg.latent_dim}, rs, 1.0));
        Value e = embed(pval(ctx, "emb"), cls);
        Value hd = stack_forward(ctx, concat(z, e, 1), "dec", cfg.n_layers);
        out = sigmoid(head_forward(ctx, hd, "dec.out"));
    } else if (chk.model_kind == "cgan" || chk.model_kind == "wgan") {
        Value z = tape.input(Tensor::randn({n, cfg.latent_dim}, rs, 1.0));
        out = generator_forward(ctx, cfg, z, cls);
    } else {
        throw std::invalid_argument("sample: not a generator checkpoint: " + chk.model_kind);
    }
    const Tensor& ot = tape.val(out);
    std::vector<double> vals(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) vals[static_cast<std::size_t>(i)] = std::clamp(ot.data[static_cast<std::size_t>(i)], 0.0, 1.0);
    return vals;
}

double wasserstein1(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("wasserstein1: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const std::size_t n = a.size(), m = b.size();
    if (n == m) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += std::abs(a[i] - b[i]);
        return acc / static_cast<double>(n);
    }
    // Piecewise-constant quantile functions integrated over the merged grid.
    std::vector<double> grid{0.0};
    for (std::size_t i = 1; i < n; ++i) grid.push_back(static_cast<double>(i) / static_cast<double>(n));
    for (std::size_t j = 1; j < m; ++j) grid.push_back(static_cast<double>(j) / static_cast<double>(m));
    grid.push_back(1.0);
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

    double acc = 0.0;
    for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
        const double q = 0.5 * (grid[k] + grid[k + 1]);
        const auto ia = std::min(n - 1, static_cast<std::size_t>(q * static_cast<double>(n)));
        const auto ib = std::min(m - 1, static_cast<std::size_t>(q * static_cast<double>(m)));
        acc += (grid[k + 1] - grid[k]) * std::abs(a[ia] - b[ib]);
    }
    return acc;
}

GenEval eval_generator(const ad::Checkpoint& chk, const data::Dataset& d, int n_per_region,
                       std::uint64_t seed) {
    if (n_per_region < 1) throw std::invalid_argument("eval_generator: n_per_region must be >= 1");
    std::map<int, std::vector<double>> real;
    std::set<int> all_labels;
    for (const auto& s : d.sets) {
        all_labels.insert(s.label);
        auto& bucket = real[s.label];
        bucket.insert(bucket.end(), s.values.begin(), s.values.end());
    }
    GenEval out;
    double acc = 0.0;
    for (int label : all_labels) {
        const auto& values = real.at(label);
        if (values.empty()) {
            out.skipped_labels.push_back(label);
            continue;
        }
        const auto fake = sample(chk, label, n_per_region,
                                 rng::derive_seed(seed, fnv1a64("gen-eval") ^
                                                            static_cast<std::uint64_t>(label)));
        RegionW1 r;
        r.label = label;
        r.w1 = wasserstein1(values, fake);
        r.n_real = static_cast<int>(values.size());
        r.n_fake = n_per_region;
        acc += r.w1;
        out.regions.push_back(r);
    }
    if (!out.regions.empty()) out.mean_w1 = acc / static_cast<double>(out.regions.size());
    return out;
}

std::vector<double> augment_set(const std::vector<double>& values, AugmentStrategy strategy,
                                const ad::Checkpoint* chk, int label, std::uint64_t seed) {
    if (values.empty()) throw std::invalid_argument("augment_set: empty set");
    if (strategy == AugmentStrategy::none) return values;
    if (chk == nullptr) throw std::invalid_argument("augment_set: missing generator checkpoint");

    const std::size_t n = values.size();
    std::size_t k = 0;
    if (strategy == AugmentStrategy::fixed) {
        k = (n + 1) / 2;  // ceil(n/2)
    } else {
        rng::Stream rs(rng::derive_seed(seed, fnv1a64("aug-count")));
        k = static_cast<std::size_t>(rs.uniform_int(static_cast<std::uint64_t>(n)));  // U{0..n}
    }
    std::vector<double> out = values;
    if (k > 0) {
        const auto extra = sample(*chk, label, static_cast<int>(k),
                                  rng::derive_seed(seed, fnv1a64("aug-draw")));
        out.insert(out.end(), extra.begin(), extra.end());
    }
    return out;
}

}  // namespace flowloc::gen
