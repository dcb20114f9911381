#pragma once

// Label-conditioned generators of scalar circulation times in normalized
// [0,1] space (adversarial pair, variational autoencoder, critic-based
// adversarial variant), exact 1-D Wasserstein-1 evaluation, and the set
// augmentation strategies used to enlarge training data.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "flowloc/checkpoint.hpp"
#include "flowloc/dataset.hpp"

namespace flowloc::gen {

enum class GenKind { cgan, cvae, wgan };

std::string kind_name(GenKind k);
GenKind kind_from_name(const std::string& name);

struct GenConfig {
    GenKind kind = GenKind::cgan;
    int hidden_width = 64;     // [32, 256]
    int n_layers = 1;          // [1, 3]
    double lr = 1e-4;          // [1e-5, 1e-3]
    int latent_dim = 4;        // [2, 16]
    int label_embed_dim = 4;   // [4, 16]
    double clip_c = 0.01;      // critic weight clip bound (wgan)
    int n_critic = 5;          // critic steps per generator step (wgan)
    int epochs = 200;
    int batch_size = 64;
    int n_classes = 2;
    std::uint64_t seed = 0;    // carried for provenance; train() takes an explicit seed
};

void validate_gen_config(const GenConfig& cfg);

nlohmann::json gen_config_to_json(const GenConfig& cfg);
GenConfig gen_config_from_json(const nlohmann::json& j);

// Per-epoch mean losses. Meaning depends on the model family:
//   cgan / wgan: loss_g = generator objective, loss_d = discriminator/critic;
//   cvae:        loss_g = total negative ELBO,  loss_d = its KL component.
struct GenTrainHistory {
    std::vector<double> loss_g;
    std::vector<double> loss_d;
};

struct GenTrainResult {
    ad::Checkpoint checkpoint;  // model_kind is "cgan" | "cvae" | "wgan"
    GenTrainHistory history;
};

// Closed-form per-sample losses at a given discriminator logit, used to pin
// the objective: at logit 0 (probability one half) both are ln 2.
inline double bce_real_from_logit(double logit) { return std::log1p(std::exp(-logit)); }
inline double bce_fake_from_logit(double logit) { return std::log1p(std::exp(logit)); }

// Critic objective on already-computed critic outputs: mean(fake) - mean(real).
double wgan_critic_objective(const std::vector<double>& c_real, const std::vector<double>& c_fake);

// KL(N(mu, sigma^2) || N(0, 1)) for one dimension.
inline double gaussian_kl_standard(double mu, double sigma) {
    return 0.5 * (mu * mu + sigma * sigma - 1.0) - std::log(sigma);
}

// Training expects an already-normalized dataset (values in [0,1]); the sorted
// unique labels define the embedding rows and are stored in the checkpoint
// config. All three are deterministic in (cfg, dataset, seed).
GenTrainResult train_cgan(const GenConfig& cfg, const data::Dataset& d, std::uint64_t seed);
GenTrainResult train_cvae(const GenConfig& cfg, const data::Dataset& d, std::uint64_t seed);
GenTrainResult train_wgan(const GenConfig& cfg, const data::Dataset& d, std::uint64_t seed);
GenTrainResult train_generator(const GenConfig& cfg, const data::Dataset& d, std::uint64_t seed);

// Draws n values for a label the checkpoint was trained on, in normalized
// space, clamped to [0,1]. Deterministic in (checkpoint, label, n, seed).
std::vector<double> sample(const ad::Checkpoint& chk, int label, int n, std::uint64_t seed);

// Exact Wasserstein-1 between empirical distributions: with equal sizes the
// mean absolute difference of sorted samples, otherwise the integral of the
// quantile-function gap over the merged quantile grid.
double wasserstein1(std::vector<double> a, std::vector<double> b);

struct RegionW1 {
    int label = 0;
    double w1 = 0.0;
    int n_real = 0;
    int n_fake = 0;
};

struct GenEval {
    std::vector<RegionW1> regions;    // labels with at least one real value
    double mean_w1 = 0.0;             // mean over evaluated regions
    std::vector<int> skipped_labels;  // labels present only as empty sets
};

GenEval eval_generator(const ad::Checkpoint& chk, const data::Dataset& d, int n_per_region,
                       std::uint64_t seed);

enum class AugmentStrategy { none, fixed, random };

std::string augment_name(AugmentStrategy s);
AugmentStrategy augment_from_name(const std::string& name);

// Returns the original values (order preserved) plus appended synthetic ones:
// none appends nothing, fixed appends ceil(n/2), random appends a count drawn
// uniformly from {0..n}. Samples are drawn fresh on every call.
std::vector<double> augment_set(const std::vector<double>& values, AugmentStrategy strategy,
                                const ad::Checkpoint* chk, int label, std::uint64_t seed);

}  // namespace flowloc::gen
