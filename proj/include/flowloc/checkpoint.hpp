#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "flowloc/autodiff.hpp"
#include "flowloc/dataset.hpp"

namespace flowloc::ad {

// Named parameter collection shared by every trainable model.
struct ParamStore {
    std::vector<std::string> names;
    std::vector<Tensor> tensors;

    int add(const std::string& name, Tensor t) {
        index_[name] = static_cast<int>(names.size());
        names.push_back(name);
        tensors.push_back(std::move(t));
        return static_cast<int>(names.size()) - 1;
    }
    int index_of(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? -1 : it->second;
    }
    const Tensor& at(const std::string& name) const;
    std::size_t size() const { return tensors.size(); }
    void rebuild_index();

private:
    std::unordered_map<std::string, int> index_;
};

// Versioned container written by train() of every model: hyperparameters,
// the normalization fitted on training data, and all named tensors.
struct Checkpoint {
    int version = 1;
    std::string model_kind;
    nlohmann::json config;
    std::optional<data::NormParams> norm;
    ParamStore params;
};

void save_checkpoint(const Checkpoint& chk, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);
std::string checkpoint_to_json(const Checkpoint& chk);
Checkpoint checkpoint_from_json(const std::string& text);

}  // namespace flowloc::ad
