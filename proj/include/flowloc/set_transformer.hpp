#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "flowloc/autodiff.hpp"
#include "flowloc/checkpoint.hpp"
#include "flowloc/dataset.hpp"

namespace flowloc::st {

struct STConfig {
    int d_hidden = 128;
    int n_heads = 4;
    int m_inducing = 16;
    int k_seeds = 1;
    double dropout_p = 0.0;
    double lr = 1e-3;
    double weight_decay = 1e-6;
    bool amsgrad = false;
    int epochs = 50;
    int n_classes = 2;
};

// Structural checks only (divisibility, positivity, dropout/lr bounds); the
// hyperparameter search module owns the discrete search-space membership.
void validate_config(const STConfig& cfg);

ad::ParamStore init_params(const STConfig& cfg, std::uint64_t seed);

// Core blocks, exposed for direct testing. `pv` holds tape Values aligned
// with the store's parameter order; `prefix` picks the block's parameters.
struct BlockCtx {
    const ad::ParamStore* store;
    const std::vector<ad::Value>* pv;
    const STConfig* cfg;
    bool training = false;
    double dropout_p = 0.0;
    std::uint64_t seed = 0;
    mutable std::uint64_t drop_counter = 0;
};

ad::Value mab(const BlockCtx& ctx, ad::Value x, ad::Value y, const std::string& prefix);
ad::Value sab(const BlockCtx& ctx, ad::Value x, const std::string& prefix);
ad::Value isab(const BlockCtx& ctx, ad::Value x, const std::string& prefix);
ad::Value pma(const BlockCtx& ctx, ad::Value z, const std::string& prefix);

// Scalar set -> class logits ([1, n_classes]).
ad::Value forward(ad::Tape& tape, const std::vector<ad::Value>& pv, const ad::ParamStore& store,
                  const STConfig& cfg, const std::vector<double>& set_values, bool training,
                  std::uint64_t dropout_seed);

// Convenience: eval-mode logits straight from tensors.
std::vector<double> forward_logits(const ad::ParamStore& store, const STConfig& cfg,
                                   const std::vector<double>& set_values);

struct TrainHistory {
    std::vector<double> train_loss;    // mean per-set CE per epoch
    std::vector<double> val_accuracy;  // fraction correct per epoch
};

struct TrainResult {
    ad::Checkpoint checkpoint;  // best validation epoch
    TrainHistory history;
};

// Per-set training (batch size 1), Adam + per-epoch cosine annealing.
// Labels may be arbitrary region ids; the sorted unique labels of the train
// set define the class order and are stored in the checkpoint config.
TrainResult train(const STConfig& cfg, const data::Dataset& train_ds,
                  const data::Dataset& val_ds, std::uint64_t seed);

// Applies checkpoint norm params to raw values, runs eval-mode forward.
// Returns (label, class probabilities); argmax ties break to the lowest label.
std::pair<int, std::vector<double>> predict(const ad::Checkpoint& chk,
                                            const std::vector<double>& raw_values);

STConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const STConfig& cfg);

}  // namespace flowloc::st
