#pragma once

// 1-D Gaussian-mixture compression of circulation-time sets and a small
// feed-forward classifier over the extracted statistics. This is the declared
// stand-in for the graph-model comparison path: it keeps the mixture-feature
// extraction and a plain classifier so augmentation comparisons stay runnable
// without the out-of-scope graph network.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "flowloc/checkpoint.hpp"

namespace flowloc::gmm {

inline constexpr double kVarianceFloor = 1e-6;
inline constexpr int kMaxComponents = 5;

struct GmmParams {
    int k = 2;                       // [2, 5]
    std::vector<double> weights;     // simplex, sum 1 within 1e-9
    std::vector<double> means;       // ascending
    std::vector<double> variances;   // >= kVarianceFloor
    double log_likelihood = 0.0;
};

// Expectation-maximization with a distance-weighted seeded initialization.
// Values are treated as a multiset: permuting the input changes nothing, bit
// for bit. Log-likelihood is non-decreasing across iterations (checked) and
// iteration stops once the gain drops below tol or max_iter is reached.
GmmParams fit_gmm_1d(const std::vector<double>& values, int k, std::uint64_t seed,
                     double tol = 1e-6, int max_iter = 200);

// Fixed-length layout [w_1, mu_1, var_1, ..., w_kmax, mu_kmax, var_kmax],
// zero-padded past p.k, components in ascending mean order.
std::vector<double> gmm_features(const GmmParams& p, int k_max = kMaxComponents);

struct MlpConfig {
    int n_hidden_layers = 1;   // [1, 3]
    int width = 64;            // [64, 512]
    double lr = 1e-3;          // [1e-5, 1e-3]
    double dropout = 0.0;      // [0, 0.4]
    int epochs = 50;
    std::uint64_t seed = 0;    // provenance; train takes an explicit seed
    int n_classes = 2;
};

void validate_mlp_config(const MlpConfig& cfg);
nlohmann::json mlp_config_to_json(const MlpConfig& cfg);
MlpConfig mlp_config_from_json(const nlohmann::json& j);

struct FeatureExample {
    std::vector<double> x;
    int label = 0;
};

struct MlpHistory {
    std::vector<double> train_loss;    // per-epoch mean
    std::vector<double> val_accuracy;  // per-epoch, on the validation examples
};

struct MlpTrainResult {
    ad::Checkpoint checkpoint;  // model_kind "gmm_mlp"; best-validation weights
    MlpHistory history;
};

// ReLU stack with softmax negative log-likelihood loss, Adam, per-example
// updates. The sorted unique train labels define the class order and are
// stored in the checkpoint config.
MlpTrainResult train_mlp(const MlpConfig& cfg, const std::vector<FeatureExample>& train,
                         const std::vector<FeatureExample>& val, std::uint64_t seed);

// Returns (label, class probabilities); ties resolve to the lowest label.
std::pair<int, std::vector<double>> predict_mlp(const ad::Checkpoint& chk,
                                                const std::vector<double>& x);

}  // namespace flowloc::gmm
