#include "glocalk/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>

namespace glocalk {

namespace {

constexpr double kRatingLo = 1.0;
constexpr double kRatingHi = 5.0;

std::vector<std::string_view> split(std::string_view line, std::string_view sep) {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (true) {
        const std::size_t next = line.find(sep, pos);
        if (next == std::string_view::npos) {
            out.push_back(line.substr(pos));
            return out;
        }
        out.push_back(line.substr(pos, next - pos));
        pos = next + sep.size();
    }
}

bool parse_i64(std::string_view s, std::int64_t& out) {
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc{} && ptr == last;
}

bool parse_f64(std::string_view s, double& out) {
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc{} && ptr == last;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == '\n' || s.back() == ' ')) {
        s.remove_suffix(1);
    }
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    return s;
}

RatingTriplet parse_fields(const std::vector<std::string_view>& fields, const std::string& path,
                           std::size_t lineno) {
    auto fail = [&](const std::string& what) -> ParseError {
        return ParseError(path + ":" + std::to_string(lineno) + ": " + what);
    };
    if (fields.size() < 3) throw fail("expected at least 3 fields, got " +
                                      std::to_string(fields.size()));
    RatingTriplet t;
    if (!parse_i64(trim(fields[0]), t.user)) throw fail("bad user id '" + std::string(fields[0]) + "'");
    if (!parse_i64(trim(fields[1]), t.item)) throw fail("bad item id '" + std::string(fields[1]) + "'");
    if (!parse_f64(trim(fields[2]), t.rating)) throw fail("bad rating '" + std::string(fields[2]) + "'");
    if (t.user <= 0 || t.item <= 0)
        throw ValidationError(path + ":" + std::to_string(lineno) + ": ids must be positive");
    if (t.rating < kRatingLo || t.rating > kRatingHi)
        throw ValidationError(path + ":" + std::to_string(lineno) + ": rating " +
                              std::to_string(t.rating) + " outside [1,5]");
    return t;
}

RatingDataset parse_lines(const std::string& path, std::string_view sep, bool allow_header,
                          const std::string& name) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    RatingDataset ds;
    ds.name = name;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view view = trim(line);
        if (view.empty()) continue;
        if (allow_header && lineno == 1 && !view.empty() && std::isalpha(static_cast<unsigned char>(view.front()))) {
            continue; // header such as "user,item,rating"
        }
        ds.triplets.push_back(parse_fields(split(view, sep), path, lineno));
    }
    ds.rebuild_index();
    return ds;
}

} // namespace

std::uint32_t IdIndex::dense(std::int64_t raw) const {
    auto it = to_dense.find(raw);
    if (it == to_dense.end())
        throw ValidationError("unknown raw id " + std::to_string(raw));
    return it->second;
}

IdIndex IdIndex::from_ids(std::vector<std::int64_t> ids) {
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    IdIndex idx;
    idx.to_raw = std::move(ids);
    idx.to_dense.reserve(idx.to_raw.size());
    for (std::size_t k = 0; k < idx.to_raw.size(); ++k)
        idx.to_dense.emplace(idx.to_raw[k], static_cast<std::uint32_t>(k));
    return idx;
}

void RatingDataset::rebuild_index() {
    std::vector<std::int64_t> users, items;
    users.reserve(triplets.size());
    items.reserve(triplets.size());
    for (const auto& t : triplets) {
        users.push_back(t.user);
        items.push_back(t.item);
    }
    user_index = IdIndex::from_ids(std::move(users));
    item_index = IdIndex::from_ids(std::move(items));
}

void unify_indices(RatingDataset& a, RatingDataset& b) {
    std::vector<std::int64_t> users, items;
    users.reserve(a.triplets.size() + b.triplets.size());
    items.reserve(a.triplets.size() + b.triplets.size());
    for (const auto* ds : {&a, &b}) {
        for (const auto& t : ds->triplets) {
            users.push_back(t.user);
            items.push_back(t.item);
        }
    }
    IdIndex uidx = IdIndex::from_ids(std::move(users));
    IdIndex iidx = IdIndex::from_ids(std::move(items));
    a.user_index = uidx;
    a.item_index = iidx;
    b.user_index = std::move(uidx);
    b.item_index = std::move(iidx);
}

RatingDataset parse_movielens_100k(const std::string& path) {
    return parse_lines(path, "\t", false, "ml100k");
}

RatingDataset parse_movielens_1m(const std::string& path) {
    return parse_lines(path, "::", false, "ml1m");
}

RatingDataset parse_triplet_csv(const std::string& path) {
    return parse_lines(path, ",", true, "triplets");
}

void write_triplet_csv(const RatingDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path);
    out << "user,item,rating\n";
    char buf[64];
    for (const auto& t : ds.triplets) {
        std::snprintf(buf, sizeof(buf), "%.17g", t.rating);
        out << t.user << ',' << t.item << ',' << buf << '\n';
    }
}

RatingMatrix build_matrix(const RatingDataset& ds, std::size_t m, std::size_t n) {
    RatingMatrix rm;
    rm.items = m;
    rm.users = n;
    rm.dense = DenseMatrix(m, n);
    rm.mask = DenseMatrix(m, n);
    std::size_t duplicates = 0;
    for (const auto& t : ds.triplets) {
        const std::uint32_t i = ds.item_index.dense(t.item);
        const std::uint32_t u = ds.user_index.dense(t.user);
        if (i >= m || u >= n)
            throw ValidationError("build_matrix: dense id (" + std::to_string(i) + "," +
                                  std::to_string(u) + ") outside " + std::to_string(m) + "x" +
                                  std::to_string(n));
        if (rm.mask(i, u) != 0.0) ++duplicates;
        rm.dense(i, u) = t.rating;
        rm.mask(i, u) = 1.0;
    }
    if (duplicates > 0)
        std::cerr << "build_matrix: " << duplicates
                  << " duplicate (item,user) pairs, last write wins\n";
    return rm;
}

std::pair<RatingDataset, RatingDataset> random_split(const RatingDataset& ds,
                                                     double test_fraction, SeededRng& rng) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw ConfigError("random_split: test_fraction must be in (0,1), got " +
                          std::to_string(test_fraction));
    const std::size_t n = ds.triplets.size();
    const std::size_t test_count = static_cast<std::size_t>(std::llround(test_fraction * n));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng.next_below(i);
        std::swap(order[i - 1], order[j]);
    }
    std::vector<char> is_test(n, 0);
    for (std::size_t k = 0; k < test_count; ++k) is_test[order[k]] = 1;

    std::pair<RatingDataset, RatingDataset> out;
    out.first.name = ds.name + "-train";
    out.second.name = ds.name + "-test";
    for (std::size_t k = 0; k < n; ++k)
        (is_test[k] ? out.second : out.first).triplets.push_back(ds.triplets[k]);
    // Children keep the parent's coordinate system.
    out.first.user_index = ds.user_index;
    out.first.item_index = ds.item_index;
    out.second.user_index = ds.user_index;
    out.second.item_index = ds.item_index;
    return out;
}

RatingDataset subsample_train(const RatingDataset& train, double ratio, SeededRng& rng) {
    if (!(ratio > 0.0 && ratio <= 1.0))
        throw ConfigError("subsample_train: ratio must be in (0,1], got " + std::to_string(ratio));
    if (ratio == 1.0) return train;
    const std::size_t n = train.triplets.size();
    const std::size_t keep = static_cast<std::size_t>(std::llround(ratio * n));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng.next_below(i);
        std::swap(order[i - 1], order[j]);
    }
    order.resize(keep);
    std::sort(order.begin(), order.end());

    RatingDataset out;
    out.name = train.name;
    out.triplets.reserve(keep);
    for (std::size_t k : order) out.triplets.push_back(train.triplets[k]);
    out.user_index = train.user_index;
    out.item_index = train.item_index;
    return out;
}

DatasetStats dataset_stats(const RatingDataset& ds) {
    if (ds.triplets.empty()) throw ValidationError("dataset_stats: empty dataset");
    DatasetStats s;
    s.users = ds.user_index.size();
    s.items = ds.item_index.size();
    s.ratings = ds.triplets.size();
    s.density = static_cast<double>(s.ratings) /
                (static_cast<double>(s.users) * static_cast<double>(s.items));
    return s;
}

} // namespace glocalk
