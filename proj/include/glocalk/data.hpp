#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "glocalk/matrix.hpp"
#include "glocalk/rng.hpp"

namespace glocalk {

struct RatingTriplet {
    std::int64_t user = 0; // raw id as it appears in the file
    std::int64_t item = 0;
    double rating = 0.0;

    friend bool operator==(const RatingTriplet&, const RatingTriplet&) = default;
};

// Contiguous re-mapping of raw ids: dense index k corresponds to the k-th
// smallest raw id. Sorted order makes the mapping independent of file order.
struct IdIndex {
    std::unordered_map<std::int64_t, std::uint32_t> to_dense;
    std::vector<std::int64_t> to_raw;

    std::size_t size() const { return to_raw.size(); }
    std::uint32_t dense(std::int64_t raw) const;
    static IdIndex from_ids(std::vector<std::int64_t> ids); // sorts + dedups
};

struct RatingDataset {
    std::string name;
    std::vector<RatingTriplet> triplets;
    IdIndex user_index;
    IdIndex item_index;

    // Rebuilds both indexes from this dataset's own triplets.
    void rebuild_index();
};

// Rebuilds both datasets' indexes over the union of their raw ids so that a
// train/test pair shares one dense coordinate system.
void unify_indices(RatingDataset& a, RatingDataset& b);

// `user<TAB>item<TAB>rating<TAB>timestamp`; timestamp ignored.
RatingDataset parse_movielens_100k(const std::string& path);

// `user::item::rating::timestamp`.
RatingDataset parse_movielens_1m(const std::string& path);

// `user,item,rating` with an optional header line.
RatingDataset parse_triplet_csv(const std::string& path);

void write_triplet_csv(const RatingDataset& ds, const std::string& path);

// Zero-imputed dense matrix (items x users) plus the observation mask.
struct RatingMatrix {
    std::size_t items = 0;
    std::size_t users = 0;
    DenseMatrix dense;
    DenseMatrix mask;
};

RatingMatrix build_matrix(const RatingDataset& ds, std::size_t m, std::size_t n);

std::pair<RatingDataset, RatingDataset> random_split(const RatingDataset& ds,
                                                     double test_fraction, SeededRng& rng);

RatingDataset subsample_train(const RatingDataset& train, double ratio, SeededRng& rng);

struct DatasetStats {
    std::size_t users = 0;
    std::size_t items = 0;
    std::size_t ratings = 0;
    double density = 0.0;
};

DatasetStats dataset_stats(const RatingDataset& ds);

} // namespace glocalk
