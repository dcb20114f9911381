#include "flowloc/topology.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <set>
#include <sstream>

#include <json.hpp>

#include "flowloc/rng.hpp"
#include "flowloc/util.hpp"

namespace flowloc::topo {

using nlohmann::json;

const char* kind_name(RegionKind k) {
    switch (k) {
        case RegionKind::Aorta: return "aorta";
        case RegionKind::Artery: return "artery";
        case RegionKind::Vein: return "vein";
        case RegionKind::Organ: return "organ";
        case RegionKind::Limb: return "limb";
        case RegionKind::Head: return "head";
        case RegionKind::Heart: return "heart";
    }
    return "organ";
}

RegionKind kind_from_name(const std::string& name) {
    if (name == "aorta") return RegionKind::Aorta;
    if (name == "artery") return RegionKind::Artery;
    if (name == "vein") return RegionKind::Vein;
    if (name == "organ") return RegionKind::Organ;
    if (name == "limb") return RegionKind::Limb;
    if (name == "head") return RegionKind::Head;
    if (name == "heart") return RegionKind::Heart;
    throw TopologyParseError("unknown region kind: " + name);
}

double default_speed_cm_s(RegionKind k) {
    switch (k) {
        case RegionKind::Aorta: return 20.0;
        case RegionKind::Artery: return 10.0;
        case RegionKind::Vein: return 3.0;  // range 2-4, midpoint when unspecified
        case RegionKind::Organ:
        case RegionKind::Limb:
        case RegionKind::Head: return 1.0;
        case RegionKind::Heart: return 20.0;
    }
    return 1.0;
}

const Region* Topology::find(int id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &regions[it->second];
}

const Region& Topology::at(int id) const {
    const Region* r = find(id);
    if (!r) throw std::out_of_range("unknown region id: " + std::to_string(id));
    return *r;
}

std::vector<Edge> Topology::outgoing(int id) const {
    std::vector<Edge> out;
    for (const Edge& e : edges)
        if (e.from == id) out.push_back(e);
    return out;
}

void Topology::rebuild_index() {
    index_.clear();
    for (std::size_t i = 0; i < regions.size(); ++i) index_.emplace(regions[i].id, i);
}

ValidationReport validate(const Topology& t) {
    ValidationReport rep;
    auto flag = [&rep](const std::string& v) {
        rep.ok = false;
        rep.violations.push_back(v);
    };

    std::set<int> ids;
    int heart_count = 0;
    for (const Region& r : t.regions) {
        if (!ids.insert(r.id).second) flag("duplicate region id " + std::to_string(r.id));
        if (r.kind == RegionKind::Heart) ++heart_count;
        if (r.length_cm <= 0.0)
            flag("non-positive length in region " + std::to_string(r.id) + " (" + r.name + ")");
        if (r.speed_cm_s <= 0.0)
            flag("non-positive speed in region " + std::to_string(r.id) + " (" + r.name + ")");
        if (distance(r.entry_m, r.exit_m) <= 0.0)
            flag("degenerate segment (entry == exit) in region " + std::to_string(r.id));
    }
    if (heart_count != 1)
        flag("expected exactly one heart region, found " + std::to_string(heart_count));
    if (!ids.count(t.heart_id)) {
        flag("heart_id " + std::to_string(t.heart_id) + " is not a region");
    } else {
        for (const Region& r : t.regions)
            if (r.id == t.heart_id && r.kind != RegionKind::Heart)
                flag("heart_id " + std::to_string(t.heart_id) + " is not of kind heart");
    }

    std::set<std::pair<int, int>> seen_edges;
    std::unordered_map<int, double> out_sum;
    for (const Edge& e : t.edges) {
        if (!ids.count(e.from)) flag("edge from unknown region " + std::to_string(e.from));
        if (!ids.count(e.to)) flag("edge to unknown region " + std::to_string(e.to));
        if (!(e.p > 0.0 && e.p <= 1.0))
            flag("edge " + std::to_string(e.from) + "->" + std::to_string(e.to) +
                 " probability outside (0,1]");
        if (!seen_edges.insert({e.from, e.to}).second)
            flag("duplicate edge " + std::to_string(e.from) + "->" + std::to_string(e.to));
        out_sum[e.from] += e.p;
    }
    for (int id : ids) {
        auto it = out_sum.find(id);
        const double s = it == out_sum.end() ? 0.0 : it->second;
        if (std::abs(s - 1.0) > 1e-9) {
            std::ostringstream os;
            os << "outgoing probabilities of region " << id << " sum to " << s << ", expected 1";
            flag(os.str());
        }
    }

    // Strong connectivity through the heart: forward and reverse reachability.
    if (ids.count(t.heart_id)) {
        auto reach = [&](bool forward) {
            std::set<int> seen{t.heart_id};
            std::deque<int> queue{t.heart_id};
            while (!queue.empty()) {
                const int cur = queue.front();
                queue.pop_front();
                for (const Edge& e : t.edges) {
                    const int nxt = forward ? (e.from == cur ? e.to : -1)
                                            : (e.to == cur ? e.from : -1);
                    if (nxt >= 0 && ids.count(nxt) && !seen.count(nxt)) {
                        seen.insert(nxt);
                        queue.push_back(nxt);
                    }
                }
            }
            return seen;
        };
        const auto fwd = reach(true);
        const auto bwd = reach(false);
        for (int id : ids) {
            if (!fwd.count(id))
                flag("region " + std::to_string(id) + " unreachable from heart");
            if (!bwd.count(id))
                flag("heart unreachable from region " + std::to_string(id));
        }
    }
    return rep;
}

static json vec_to_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

static Vec3 vec_from_json(const json& j) {
    if (!j.is_array() || j.size() != 3) throw TopologyParseError("expected [x,y,z] vector");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

std::string to_json_string(const Topology& t) {
    json j;
    j["version"] = 1;
    j["heart_id"] = t.heart_id;
    j["anchor_position_m"] = vec_to_json(t.anchor_position_m);
    json regions = json::array();
    for (const Region& r : t.regions) {
        json jr;
        jr["id"] = r.id;
        jr["name"] = r.name;
        jr["kind"] = kind_name(r.kind);
        jr["length_cm"] = r.length_cm;
        jr["speed_cm_s"] = r.speed_cm_s;
        jr["entry_m"] = vec_to_json(r.entry_m);
        jr["exit_m"] = vec_to_json(r.exit_m);
        regions.push_back(jr);
    }
    j["regions"] = regions;
    json edges = json::array();
    for (const Edge& e : t.edges)
        edges.push_back(json{{"from", e.from}, {"to", e.to}, {"p", e.p}});
    j["edges"] = edges;
    return j.dump(2) + "\n";
}

Topology from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw TopologyParseError(std::string("topology parse error: ") + e.what());
    }
    try {
        if (!j.contains("version") || j["version"].get<int>() != 1)
            throw TopologyParseError("unsupported topology schema version");
        Topology t;
        t.heart_id = j.at("heart_id").get<int>();
        t.anchor_position_m = vec_from_json(j.at("anchor_position_m"));
        for (const json& jr : j.at("regions")) {
            Region r;
            r.id = jr.at("id").get<int>();
            r.name = jr.at("name").get<std::string>();
            r.kind = kind_from_name(jr.at("kind").get<std::string>());
            r.length_cm = jr.at("length_cm").get<double>();
            r.speed_cm_s = jr.contains("speed_cm_s") ? jr["speed_cm_s"].get<double>()
                                                     : default_speed_cm_s(r.kind);
            r.entry_m = vec_from_json(jr.at("entry_m"));
            r.exit_m = vec_from_json(jr.at("exit_m"));
            t.regions.push_back(std::move(r));
        }
        for (const json& je : j.at("edges")) {
            Edge e;
            e.from = je.at("from").get<int>();
            e.to = je.at("to").get<int>();
            e.p = je.at("p").get<double>();
            t.edges.push_back(e);
        }
        t.rebuild_index();
        return t;
    } catch (const json::exception& e) {
        throw TopologyParseError(std::string("topology parse error: ") + e.what());
    }
}

Topology load_topology(const std::string& path) {
    Topology t = from_json_string(read_text_file(path));
    const ValidationReport rep = validate(t);
    if (!rep.ok) {
        std::string msg = "topology validation failed:";
        for (const auto& v : rep.violations) msg += "\n  - " + v;
        throw TopologyValidationError(msg);
    }
    return t;
}

void save_topology(const Topology& t, const std::string& path) {
    write_text_file(path, to_json_string(t));
}

std::string topology_hash(const Topology& t) {
    return hex64(fnv1a64(to_json_string(t)));
}

namespace {

struct ChainSpec {
    std::vector<RegionKind> kinds;   // artery -> mid -> vein, possibly truncated
    std::string name_prefix;
    double weight = 1.0;             // unnormalized branch probability
    std::vector<double> lengths_cm;
    std::vector<double> speeds;
    Vec3 direction;                  // unit-ish direction away from the aorta exit
};

RegionKind mid_kind_for(int pair_index) {
    return pair_index % 2 == 0 ? RegionKind::Limb : RegionKind::Organ;
}

}  // namespace

Topology default_topology(int n_regions, std::uint64_t seed) {
    if (n_regions < 2)
        throw std::invalid_argument("default_topology requires n_regions >= 2");

    rng::Stream rs(rng::derive_seed(seed, fnv1a64("topology")));
    Topology t;
    t.heart_id = 0;

    const Vec3 heart_entry{0.05, 0.0, 1.23};
    const Vec3 heart_exit{0.05, 0.0, 1.27};
    Region heart;
    heart.id = 0;
    heart.name = "heart";
    heart.kind = RegionKind::Heart;
    heart.length_cm = 4.0;
    heart.speed_cm_s = default_speed_cm_s(RegionKind::Heart);
    heart.entry_m = heart_entry;
    heart.exit_m = heart_exit;
    t.regions.push_back(heart);
    t.anchor_position_m = midpoint(heart_entry, heart_exit);

    if (n_regions == 2) {
        Region organ;
        organ.id = 1;
        organ.name = "organ";
        organ.kind = RegionKind::Organ;
        organ.length_cm = 5.0 + 20.0 * rs.uniform();
        organ.speed_cm_s = 1.0;
        organ.entry_m = heart_exit;
        organ.exit_m = heart_entry;
        t.regions.push_back(organ);
        t.edges.push_back({0, 1, 1.0});
        t.edges.push_back({1, 0, 1.0});
        t.rebuild_index();
        return t;
    }

    Region aorta;
    aorta.id = 1;
    aorta.name = "aorta";
    aorta.kind = RegionKind::Aorta;
    aorta.length_cm = 40.0;
    aorta.speed_cm_s = default_speed_cm_s(RegionKind::Aorta);
    aorta.entry_m = heart_exit;
    aorta.exit_m = {0.05, 0.0, 0.95};
    t.regions.push_back(aorta);

    // Split the remaining budget into chains: one head branch, mirrored
    // limb/organ pairs, then short center chains for the leftover budget.
    int remaining = n_regions - 2;
    std::vector<ChainSpec> chains;
    auto draw_chain = [&rs](int len, RegionKind mid) {
        ChainSpec c;
        if (len == 3)
            c.kinds = {RegionKind::Artery, mid, RegionKind::Vein};
        else if (len == 2)
            c.kinds = {RegionKind::Artery, mid};
        else
            c.kinds = {mid};
        for (RegionKind k : c.kinds) {
            double len_cm = 0.0;
            switch (k) {
                case RegionKind::Artery: len_cm = rs.uniform(15.0, 35.0); break;
                case RegionKind::Vein: len_cm = rs.uniform(30.0, 60.0); break;
                default: len_cm = rs.uniform(10.0, 25.0); break;
            }
            c.lengths_cm.push_back(len_cm);
            c.speeds.push_back(k == RegionKind::Vein ? rs.uniform(2.0, 4.0)
                                                     : default_speed_cm_s(k));
        }
        c.weight = rs.uniform(0.6, 1.4);
        return c;
    };

    if (remaining >= 3) {
        ChainSpec head = draw_chain(3, RegionKind::Head);
        head.name_prefix = "head";
        head.direction = {0.0, 0.0, 1.0};
        chains.push_back(head);
        remaining -= 3;
    }
    int pair_index = 0;
    while (remaining >= 6) {
        ChainSpec left = draw_chain(3, mid_kind_for(pair_index));
        const std::string base =
            (left.kinds[1] == RegionKind::Limb ? "limb" : "organ") + std::to_string(pair_index);
        ChainSpec right = left;  // mirror twin: identical lengths, speeds, weight
        left.name_prefix = base + "_left";
        right.name_prefix = base + "_right";
        const double lateral = 0.15 + 0.1 * (pair_index % 4);
        const double drop = -0.3 + 0.15 * (pair_index % 5);
        left.direction = {-lateral, 0.05, drop};
        right.direction = {lateral, 0.05, drop};
        chains.push_back(left);
        chains.push_back(right);
        remaining -= 6;
        ++pair_index;
    }
    int center_index = 0;
    while (remaining > 0) {
        const int len = std::min(remaining, 3);
        ChainSpec c = draw_chain(len, RegionKind::Organ);
        c.name_prefix = "center" + std::to_string(center_index);
        c.direction = {0.02 * (center_index + 1), -0.1, -0.25};
        chains.push_back(c);
        remaining -= len;
        ++center_index;
    }

    int next_id = 2;
    std::vector<std::pair<int, double>> branch_heads;  // (first region id, weight)
    for (const ChainSpec& c : chains) {
        Vec3 cursor = aorta.exit_m;
        std::vector<int> chain_ids;
        for (std::size_t i = 0; i < c.kinds.size(); ++i) {
            Region r;
            r.id = next_id++;
            r.kind = c.kinds[i];
            r.name = c.name_prefix +
                     (c.kinds.size() == 1 ? "" : std::string("_") + kind_name(r.kind));
            r.length_cm = c.lengths_cm[i];
            r.speed_cm_s = c.speeds[i];
            r.entry_m = cursor;
            const bool last = i + 1 == c.kinds.size();
            if (last) {
                r.exit_m = heart_entry;  // every chain drains back to the heart
            } else {
                const double span_m = r.length_cm / 100.0;
                r.exit_m = cursor + c.direction * span_m;
                cursor = r.exit_m;
            }
            chain_ids.push_back(r.id);
            t.regions.push_back(r);
        }
        branch_heads.emplace_back(chain_ids.front(), c.weight);
        for (std::size_t i = 0; i + 1 < chain_ids.size(); ++i)
            t.edges.push_back({chain_ids[i], chain_ids[i + 1], 1.0});
        t.edges.push_back({chain_ids.back(), 0, 1.0});
    }

    t.edges.push_back({0, 1, 1.0});
    double weight_sum = 0.0;
    for (const auto& [id, w] : branch_heads) weight_sum += w;
    double acc = 0.0;
    for (std::size_t i = 0; i < branch_heads.size(); ++i) {
        // Last probability closes the simplex exactly so sums pass validation.
        double p = branch_heads[i].second / weight_sum;
        if (i + 1 == branch_heads.size()) p = 1.0 - acc;
        acc += p;
        t.edges.push_back({1, branch_heads[i].first, p});
    }

    t.rebuild_index();
    return t;
}

double expected_loop_time(const Topology& t) {
    const std::size_t n = t.regions.size();
    std::unordered_map<int, std::size_t> col;
    for (std::size_t i = 0; i < n; ++i) col[t.regions[i].id] = i;
    const std::size_t heart = col.at(t.heart_id);

    // Unknowns: E[T_i] for i != heart (time from entering i to entering heart).
    std::vector<std::size_t> vars;
    std::vector<std::size_t> var_of(n, SIZE_MAX);
    for (std::size_t i = 0; i < n; ++i) {
        if (i == heart) continue;
        var_of[i] = vars.size();
        vars.push_back(i);
    }
    const std::size_t m = vars.size();
    if (m == 0) return 0.0;

    std::vector<double> a(m * (m + 1), 0.0);
    for (std::size_t r = 0; r < m; ++r) {
        const Region& reg = t.regions[vars[r]];
        a[r * (m + 1) + r] = 1.0;
        a[r * (m + 1) + m] = reg.traversal_time_s();
        for (const Edge& e : t.edges) {
            if (e.from != reg.id || e.to == t.heart_id) continue;
            a[r * (m + 1) + var_of[col.at(e.to)]] -= e.p;
        }
    }

    // Gaussian elimination with partial pivoting.
    for (std::size_t k = 0; k < m; ++k) {
        std::size_t piv = k;
        for (std::size_t r = k + 1; r < m; ++r)
            if (std::abs(a[r * (m + 1) + k]) > std::abs(a[piv * (m + 1) + k])) piv = r;
        if (std::abs(a[piv * (m + 1) + k]) < 1e-12)
            throw std::runtime_error("expected_loop_time: singular system (disconnected graph?)");
        if (piv != k)
            for (std::size_t c = k; c <= m; ++c)
                std::swap(a[piv * (m + 1) + c], a[k * (m + 1) + c]);
        for (std::size_t r = k + 1; r < m; ++r) {
            const double f = a[r * (m + 1) + k] / a[k * (m + 1) + k];
            if (f == 0.0) continue;
            for (std::size_t c = k; c <= m; ++c) a[r * (m + 1) + c] -= f * a[k * (m + 1) + c];
        }
    }
    std::vector<double> x(m, 0.0);
    for (std::size_t rk = m; rk-- > 0;) {
        double s = a[rk * (m + 1) + m];
        for (std::size_t c = rk + 1; c < m; ++c) s -= a[rk * (m + 1) + c] * x[c];
        x[rk] = s / a[rk * (m + 1) + rk];
    }

    double loop = 0.0;
    for (const Edge& e : t.edges) {
        if (e.from != t.heart_id) continue;
        if (e.to == t.heart_id) continue;  // immediate return contributes zero
        loop += e.p * x[var_of[col.at(e.to)]];
    }
    return loop;
}

Vec3 region_centroid(const Topology& t, int region_id) {
    return t.at(region_id).centroid_m();
}

}  // namespace flowloc::topo
