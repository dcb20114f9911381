#include "flowloc/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include <json.hpp>

#include "flowloc/rng.hpp"
#include "flowloc/util.hpp"

namespace flowloc::data {

using nlohmann::json;

namespace {

SampleSet set_from_reports(const std::vector<sim::CirculationReport>& reports, int label,
                           const Vec3& event_pos, const std::string& placement,
                           std::uint64_t seed) {
    SampleSet s;
    s.label = label;
    s.event_position_m = event_pos;
    s.placement = placement;
    s.seed = seed;
    for (const auto& r : reports)
        if (r.event_bit) s.values.push_back(r.circulation_time_s);
    if (s.values.empty()) s.flags.push_back("empty");
    return s;
}

}  // namespace

Dataset build_training_set(const topo::Topology& t, const sim::SimConfig& sc,
                           const sim::EnergyConfig& ec, const sim::LinkConfig& lc,
                           std::uint64_t seed, int n_threads) {
    Dataset d;
    d.topology_hash = topo::topology_hash(t);
    d.sets.resize(t.regions.size());
    // One independent simulation per region; region order fixes output order.
    parallel_for(t.regions.size(), n_threads, [&](std::size_t i) {
        const int region_id = t.regions[i].id;
        const std::uint64_t sim_seed =
            rng::derive_seed(seed, fnv1a64("train-sim") ^ static_cast<std::uint64_t>(region_id));
        sim::SimConfig sc_r = sc;
        sc_r.seed = sim_seed;
        const sim::EventSpec ev = sim::event_at_centroid(t, region_id);
        const auto reports = sim::simulate(t, sc_r, ec, lc, ev, 1);
        d.sets[i] = set_from_reports(reports, region_id, ev.position_m, "centroid", sim_seed);
    });
    return d;
}

Dataset build_test_set(const topo::Topology& t, const sim::SimConfig& sc,
                       const sim::EnergyConfig& ec, const sim::LinkConfig& lc,
                       int n_per_region, std::uint64_t seed, int n_threads) {
    if (n_per_region < 1)
        throw std::invalid_argument("build_test_set: n_per_region must be >= 1");
    Dataset d;
    d.topology_hash = topo::topology_hash(t);
    const std::size_t n_sets = t.regions.size() * static_cast<std::size_t>(n_per_region);
    d.sets.resize(n_sets);
    parallel_for(n_sets, n_threads, [&](std::size_t k) {
        const std::size_t i = k / static_cast<std::size_t>(n_per_region);
        const std::size_t rep = k % static_cast<std::size_t>(n_per_region);
        const int region_id = t.regions[i].id;
        const std::uint64_t set_seed = rng::derive_seed(
            seed, fnv1a64("test-sim") ^
                      (static_cast<std::uint64_t>(region_id) << 20 | static_cast<std::uint64_t>(rep)));
        const sim::EventSpec ev = sim::event_at_random(t, region_id, set_seed);
        sim::SimConfig sc_r = sc;
        sc_r.seed = set_seed;
        const auto reports = sim::simulate(t, sc_r, ec, lc, ev, 1);
        d.sets[k] = set_from_reports(reports, region_id, ev.position_m, "random", set_seed);
    });
    return d;
}

double normalize_value(double v, const NormParams& p) {
    const double x = (v - p.min_s) / (p.max_s - p.min_s);
    return std::clamp(x, 0.0, 1.0);
}

double denormalize_value(double v, const NormParams& p) {
    return p.min_s + v * (p.max_s - p.min_s);
}

std::pair<Dataset, NormParams> normalize(const Dataset& d) {
    double lo = 0.0, hi = 0.0;
    bool any = false;
    for (const auto& s : d.sets)
        for (double v : s.values) {
            if (!any) {
                lo = hi = v;
                any = true;
            } else {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        }
    if (!any || hi <= lo)
        throw std::domain_error("normalize: need at least two distinct values");
    const NormParams p{lo, hi};
    return {apply_norm(d, p), p};
}

Dataset apply_norm(const Dataset& d, const NormParams& p) {
    if (!(p.max_s > p.min_s))
        throw std::domain_error("apply_norm: max must exceed min");
    Dataset out = d;
    out.norm = p;
    for (auto& s : out.sets)
        for (double& v : s.values) v = normalize_value(v, p);
    return out;
}

std::pair<Dataset, Dataset> split(const Dataset& d, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0))
        throw std::invalid_argument("split: ratio must lie in (0,1)");

    std::map<int, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < d.sets.size(); ++i) by_label[d.sets[i].label].push_back(i);

    const auto target =
        static_cast<std::size_t>(std::llround(ratio * static_cast<double>(d.sets.size())));

    // Largest-remainder quota per label; ties broken by a seeded draw so no
    // label is systematically favored.
    struct Quota {
        int label;
        std::size_t base;
        double frac;
        std::uint64_t tie;
        std::vector<std::size_t>* idx;
    };
    std::vector<Quota> quotas;
    std::size_t base_total = 0;
    for (auto& [label, idx] : by_label) {
        const double share = ratio * static_cast<double>(idx.size());
        Quota q;
        q.label = label;
        q.base = static_cast<std::size_t>(std::floor(share + 1e-12));
        q.frac = share - static_cast<double>(q.base);
        rng::Stream ts(rng::derive_seed(seed, fnv1a64("split-tie") ^
                                                  static_cast<std::uint64_t>(label)));
        q.tie = ts.next_u64();
        q.idx = &idx;
        base_total += q.base;
        quotas.push_back(q);
    }
    std::vector<std::size_t> order(quotas.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (quotas[a].frac != quotas[b].frac) return quotas[a].frac > quotas[b].frac;
        return quotas[a].tie < quotas[b].tie;
    });
    std::size_t extra = target > base_total ? target - base_total : 0;
    std::vector<std::size_t> take(quotas.size());
    for (std::size_t i = 0; i < quotas.size(); ++i) take[i] = quotas[i].base;
    for (std::size_t i = 0; i < order.size() && extra > 0; ++i) {
        const std::size_t qi = order[i];
        if (take[qi] < quotas[qi].idx->size()) {
            take[qi] += 1;
            --extra;
        }
    }

    Dataset train, val;
    train.norm = val.norm = d.norm;
    train.topology_hash = val.topology_hash = d.topology_hash;
    for (std::size_t qi = 0; qi < quotas.size(); ++qi) {
        std::vector<std::size_t> idx = *quotas[qi].idx;
        rng::Stream rs(rng::derive_seed(seed, fnv1a64("split") ^
                                                  static_cast<std::uint64_t>(quotas[qi].label)));
        rng::shuffle(idx, rs);
        for (std::size_t k = 0; k < idx.size(); ++k)
            (k < take[qi] ? train : val).sets.push_back(d.sets[idx[k]]);
    }
    return {train, val};
}

void serialize(const Dataset& d, const std::string& path) {
    std::string lines;
    std::string placement;
    std::uint64_t seed = 0;
    for (const auto& s : d.sets) {
        json j;
        j["label"] = s.label;
        j["values"] = s.values;
        j["event_position_m"] = {s.event_position_m.x, s.event_position_m.y,
                                 s.event_position_m.z};
        j["flags"] = s.flags;
        lines += j.dump();
        lines += '\n';
        placement = s.placement;
        seed = s.seed;
    }
    write_text_file(path, lines);

    json manifest;
    manifest["version"] = 1;
    manifest["topology_hash"] = d.topology_hash;
    manifest["placement"] = placement;
    manifest["seed"] = seed;
    if (d.norm)
        manifest["norm"] = {{"min_s", d.norm->min_s}, {"max_s", d.norm->max_s}};
    else
        manifest["norm"] = nullptr;
    write_text_file(path + ".manifest.json", manifest.dump(2) + "\n");
}

Dataset deserialize(const std::string& path, std::vector<std::string>* warnings,
                    const std::string& expected_topology_hash) {
    json manifest;
    try {
        manifest = json::parse(read_text_file(path + ".manifest.json"));
    } catch (const json::exception& e) {
        throw DatasetFormatError(std::string("bad dataset manifest: ") + e.what());
    }
    if (!manifest.contains("version") || manifest["version"].get<int>() != 1)
        throw DatasetFormatError("unsupported dataset schema version");

    Dataset d;
    d.topology_hash = manifest.value("topology_hash", std::string());
    const std::string placement = manifest.value("placement", std::string());
    const std::uint64_t seed = manifest.value("seed", 0ULL);
    if (!manifest["norm"].is_null())
        d.norm = NormParams{manifest["norm"]["min_s"].get<double>(),
                            manifest["norm"]["max_s"].get<double>()};

    if (!expected_topology_hash.empty() && d.topology_hash != expected_topology_hash &&
        warnings)
        warnings->push_back("dataset topology hash " + d.topology_hash +
                            " does not match expected " + expected_topology_hash);

    std::istringstream in(read_text_file(path));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DatasetFormatError(std::string("bad dataset line: ") + e.what());
        }
        SampleSet s;
        s.label = j.at("label").get<int>();
        s.values = j.at("values").get<std::vector<double>>();
        const auto& p = j.at("event_position_m");
        s.event_position_m = {p[0].get<double>(), p[1].get<double>(), p[2].get<double>()};
        s.flags = j.at("flags").get<std::vector<std::string>>();
        s.placement = placement;
        s.seed = seed;
        d.sets.push_back(std::move(s));
    }
    return d;
}

std::vector<LabelSummary> label_cardinalities(const Dataset& d) {
    std::map<int, LabelSummary> m;
    for (const auto& s : d.sets) {
        auto& e = m[s.label];
        e.label = s.label;
        e.n_sets += 1;
        e.n_values += s.values.size();
    }
    std::vector<LabelSummary> out;
    for (auto& [label, e] : m) out.push_back(e);
    return out;
}

}  // namespace flowloc::data
