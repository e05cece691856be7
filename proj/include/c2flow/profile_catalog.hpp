#pragma once

// Groups profile texts by TLSH similarity (DBSCAN over the TLSH distance) and
// aggregates the groups per mimicked domain.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "c2flow/app_metadata.hpp"
#include "c2flow/error.hpp"
#include "c2flow/log.hpp"
#include "c2flow/parallel.hpp"
#include "c2flow/tlsh.hpp"

namespace c2flow {

struct ProfileEntry {
    std::string profile_id;
    std::string mimicked_domain;
    std::uint64_t instance_count = 1;
    std::string text;
};

struct ProfileDigest {
    std::string profile_id;
    tlsh::Digest digest;
    std::string mimicked_domain;
    std::uint64_t instance_count = 1;
};

struct ClusterParams {
    int epsilon = 30;
    std::size_t min_pts = 2;
};

inline ProfileDigest tlsh_digest(const ProfileEntry& p) {
    return {p.profile_id, tlsh::digest(p.text), normalize_domain(p.mimicked_domain), p.instance_count};
}

struct DigestBatch {
    std::vector<ProfileDigest> digests;
    std::vector<std::string> unhashable;  // profile ids
};

inline DigestBatch digest_profiles(const std::vector<ProfileEntry>& profiles, unsigned jobs = 1) {
    std::vector<std::optional<ProfileDigest>> out(profiles.size());
    parallel_for(profiles.size(), jobs, [&](std::size_t i) {
        try {
            out[i] = tlsh_digest(profiles[i]);
        } catch (const NotHashableError&) {
        }
    });
    DigestBatch b;
    for (std::size_t i = 0; i < profiles.size(); ++i) {
        if (out[i]) {
            b.digests.push_back(std::move(*out[i]));
        } else {
            log().warn("profile {} is not hashable; skipped", profiles[i].profile_id);
            b.unhashable.push_back(profiles[i].profile_id);
        }
    }
    return b;
}

// Cluster label per input digest: -1 for noise, otherwise 0..n_clusters-1.
struct Clustering {
    std::vector<int> labels;
    int n_clusters = 0;
};

inline std::vector<std::vector<int>> distance_matrix(const std::vector<ProfileDigest>& d, unsigned jobs = 1) {
    const std::size_t n = d.size();
    std::vector<std::vector<int>> m(n, std::vector<int>(n, 0));
    parallel_for(n, jobs, [&](std::size_t i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i != j) m[i][j] = tlsh::distance(d[i].digest, d[j].digest);
        }
    });
    return m;
}

// DBSCAN with the neighbourhood including the point itself. Points are
// visited in profile_id order, so a border point reachable from several
// clusters lands in the lowest-numbered one.
inline Clustering dbscan(const std::vector<ProfileDigest>& digests, const ClusterParams& params, unsigned jobs = 1) {
    if (params.epsilon < 0) throw ContractError("dbscan: epsilon must be non-negative");
    if (params.min_pts < 1) throw ContractError("dbscan: min_pts must be at least 1");
    const std::size_t n = digests.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return digests[a].profile_id < digests[b].profile_id;
    });
    const auto dist = distance_matrix(digests, jobs);

    auto neighbours = [&](std::size_t p) {
        std::vector<std::size_t> out;
        for (auto q : order) {
            if (dist[p][q] <= params.epsilon) out.push_back(q);
        }
        return out;
    };

    Clustering c;
    c.labels.assign(n, -1);
    std::vector<bool> visited(n, false);
    for (auto p : order) {
        if (visited[p]) continue;
        visited[p] = true;
        auto nb = neighbours(p);
        if (nb.size() < params.min_pts) continue;
        const int id = c.n_clusters++;
        c.labels[p] = id;
        std::vector<std::size_t> queue(nb.begin(), nb.end());
        for (std::size_t qi = 0; qi < queue.size(); ++qi) {
            const auto q = queue[qi];
            if (c.labels[q] < 0) c.labels[q] = id;
            if (visited[q]) continue;
            visited[q] = true;
            auto nq = neighbours(q);
            if (nq.size() >= params.min_pts) queue.insert(queue.end(), nq.begin(), nq.end());
        }
    }
    return c;
}

struct ProfileGroup {
    std::string group_id;
    std::vector<std::string> members;
    std::string representative_id;
    std::vector<std::string> domains;
    std::vector<SubnetRule> subnets;
};

inline void to_json(nlohmann::json& j, const ProfileGroup& g) {
    std::vector<std::string> subnets;
    for (const auto& s : g.subnets) subnets.push_back(s.cidr.to_string());
    j = nlohmann::json{{"group_id", g.group_id},
                       {"members", g.members},
                       {"representative_id", g.representative_id},
                       {"domains", g.domains},
                       {"subnets", subnets}};
}

inline void from_json(const nlohmann::json& j, ProfileGroup& g) {
    j.at("group_id").get_to(g.group_id);
    if (g.group_id.empty()) throw ParseError("group without group_id");
    g.members = j.value("members", std::vector<std::string>{});
    g.representative_id = j.value("representative_id", std::string());
    if (!g.representative_id.empty() &&
        std::find(g.members.begin(), g.members.end(), g.representative_id) == g.members.end()) {
        throw ParseError("group " + g.group_id + ": representative is not a member");
    }
    g.domains.clear();
    for (const auto& d : j.value("domains", std::vector<std::string>{})) g.domains.push_back(normalize_domain(d));
    g.subnets.clear();
    for (const auto& s : j.value("subnets", std::vector<std::string>{})) g.subnets.push_back({Cidr::parse(s), g.group_id});
}

// Every cluster becomes a group; each noise profile becomes a singleton group.
inline std::vector<ProfileGroup> build_groups(const std::vector<ProfileDigest>& digests, const Clustering& c) {
    std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(c.n_clusters));
    std::vector<std::size_t> noise;
    for (std::size_t i = 0; i < digests.size(); ++i) {
        if (c.labels[i] >= 0) {
            members[static_cast<std::size_t>(c.labels[i])].push_back(i);
        } else {
            noise.push_back(i);
        }
    }
    std::sort(noise.begin(), noise.end(), [&](auto a, auto b) { return digests[a].profile_id < digests[b].profile_id; });
    for (auto i : noise) members.push_back({i});

    std::vector<ProfileGroup> groups;
    const int width = std::max<int>(3, static_cast<int>(std::to_string(members.size()).size()));
    for (std::size_t g = 0; g < members.size(); ++g) {
        auto& idx = members[g];
        std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return digests[a].profile_id < digests[b].profile_id; });
        ProfileGroup pg;
        std::string num = std::to_string(g + 1);
        pg.group_id = "g" + std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(num.size()))), '0') + num;
        std::set<std::string> domains;
        std::size_t rep = idx.front();
        for (auto i : idx) {
            pg.members.push_back(digests[i].profile_id);
            if (!digests[i].mimicked_domain.empty()) domains.insert(normalize_domain(digests[i].mimicked_domain));
            if (digests[i].instance_count > digests[rep].instance_count) rep = i;
        }
        pg.representative_id = digests[rep].profile_id;
        pg.domains.assign(domains.begin(), domains.end());
        groups.push_back(std::move(pg));
    }
    return groups;
}

struct DomainRank {
    std::string domain;
    std::size_t group_count = 0;
    std::uint64_t instance_count = 0;
    std::size_t unique_profiles = 0;

    friend bool operator==(const DomainRank&, const DomainRank&) = default;
};

// Per mimicked domain: number of groups holding at least one of its profiles,
// total instances and distinct profiles. Sorted by instances, descending.
inline std::vector<DomainRank> rank_groups(const std::vector<ProfileDigest>& digests, const Clustering& c) {
    struct Acc {
        std::set<long> groups;
        std::uint64_t instances = 0;
        std::set<std::string> profiles;
    };
    std::map<std::string, Acc> acc;
    for (std::size_t i = 0; i < digests.size(); ++i) {
        auto& a = acc[normalize_domain(digests[i].mimicked_domain)];
        // noise profiles are their own group; give them ids past the clusters
        a.groups.insert(c.labels[i] >= 0 ? c.labels[i] : c.n_clusters + static_cast<long>(i));
        a.instances += digests[i].instance_count;
        a.profiles.insert(digests[i].profile_id);
    }
    std::vector<DomainRank> out;
    for (auto& [domain, a] : acc) out.push_back({domain, a.groups.size(), a.instances, a.profiles.size()});
    std::stable_sort(out.begin(), out.end(), [](const DomainRank& a, const DomainRank& b) {
        return a.instance_count > b.instance_count;
    });
    return out;
}

inline std::string ranks_to_csv(const std::vector<DomainRank>& ranks) {
    std::string out = "domain,groups,instances,unique_profiles\n";
    for (const auto& r : ranks) {
        out += r.domain + ',' + std::to_string(r.group_count) + ',' + std::to_string(r.instance_count) + ',' +
               std::to_string(r.unique_profiles) + '\n';
    }
    return out;
}

inline std::string groups_to_json(const std::vector<ProfileGroup>& groups) {
    return nlohmann::json{{"groups", groups}}.dump(2) + "\n";
}

namespace catalog_detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace catalog_detail

// Reads the sidecar CSV (profile_id, mimicked_domain, instance_count) and the
// profile text `<dir>/<profile_id>` (or `<profile_id>.profile`) for each row.
inline std::vector<ProfileEntry> load_profile_corpus(const std::filesystem::path& dir, const std::filesystem::path& sidecar) {
    std::ifstream in(sidecar);
    if (!in) throw std::runtime_error("cannot open " + sidecar.string());
    std::vector<ProfileEntry> out;
    std::string line;
    std::size_t line_no = 0;
    std::set<std::string> seen;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto cols = catalog_detail::split_csv_line(line);
        if (line_no == 1 && !cols.empty() && cols[0] == "profile_id") continue;
        if (cols.size() < 3) throw ParseError(sidecar.string() + ":" + std::to_string(line_no) + ": expected 3 columns");
        ProfileEntry e;
        e.profile_id = cols[0];
        e.mimicked_domain = cols[1];
        try {
            e.instance_count = std::stoull(cols[2]);
        } catch (const std::exception&) {
            throw ParseError(sidecar.string() + ":" + std::to_string(line_no) + ": bad instance_count");
        }
        if (!seen.insert(e.profile_id).second) {
            throw ParseError(sidecar.string() + ":" + std::to_string(line_no) + ": duplicate profile " + e.profile_id);
        }
        auto path = dir / e.profile_id;
        if (!std::filesystem::exists(path)) path = dir / (e.profile_id + ".profile");
        std::ifstream pf(path, std::ios::binary);
        if (!pf) throw std::runtime_error("profile text not found for " + e.profile_id);
        std::ostringstream ss;
        ss << pf.rdbuf();
        e.text = ss.str();
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace c2flow
