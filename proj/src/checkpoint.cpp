#include "flowloc/checkpoint.hpp"

#include <stdexcept>

#include "flowloc/util.hpp"

namespace flowloc::ad {

using nlohmann::json;

const Tensor& ParamStore::at(const std::string& name) const {
    const int i = index_of(name);
    if (i < 0) throw std::out_of_range("no parameter named " + name);
    return tensors[static_cast<std::size_t>(i)];
}

void ParamStore::rebuild_index() {
    index_.clear();
    for (std::size_t i = 0; i < names.size(); ++i) index_[names[i]] = static_cast<int>(i);
}

std::string checkpoint_to_json(const Checkpoint& chk) {
    json j;
    j["version"] = chk.version;
    j["model_kind"] = chk.model_kind;
    j["config"] = chk.config;
    if (chk.norm)
        j["norm"] = {{"min_s", chk.norm->min_s}, {"max_s", chk.norm->max_s}};
    else
        j["norm"] = nullptr;
    json params = json::array();
    for (std::size_t i = 0; i < chk.params.size(); ++i) {
        json p;
        p["name"] = chk.params.names[i];
        p["shape"] = chk.params.tensors[i].shape;
        p["data"] = chk.params.tensors[i].data;
        params.push_back(p);
    }
    j["params"] = params;
    return j.dump() + "\n";
}

Checkpoint checkpoint_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("bad checkpoint: ") + e.what());
    }
    if (!j.contains("version") || j["version"].get<int>() != 1)
        throw std::runtime_error("unsupported checkpoint version");
    Checkpoint chk;
    chk.model_kind = j.at("model_kind").get<std::string>();
    chk.config = j.at("config");
    if (!j.at("norm").is_null())
        chk.norm = data::NormParams{j["norm"]["min_s"].get<double>(),
                                    j["norm"]["max_s"].get<double>()};
    for (const json& p : j.at("params")) {
        Tensor t = Tensor::from(p.at("shape").get<std::vector<int>>(),
                                p.at("data").get<std::vector<double>>());
        chk.params.add(p.at("name").get<std::string>(), std::move(t));
    }
    return chk;
}

void save_checkpoint(const Checkpoint& chk, const std::string& path) {
    write_text_file(path, checkpoint_to_json(chk));
}

Checkpoint load_checkpoint(const std::string& path) {
    return checkpoint_from_json(read_text_file(path));
}

}  // namespace flowloc::ad
