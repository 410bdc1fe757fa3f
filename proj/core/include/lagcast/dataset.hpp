/**
 * @file dataset.hpp
 * @brief Target filtering and the chronological train/validation/test split.
 */
#pragma once

#include <cstdint>
#include <vector>

#include "lagcast/field.hpp"

namespace lagcast {

struct FilterParams {
    float pixel_threshold = 0.6f;  ///< mm/h a cell must reach to count as rainy
    double area_fraction = 0.05;   ///< fraction of rainy cells a target needs
    int lead_count = 11;           ///< observations that must precede a target
    double test_fraction = 0.2;
    double validation_fraction = 0.15;  ///< of the non-test remainder
};

/// Target-observation indices per split. A target at index t consumes archive
/// observations [t - lead_count, t].
struct DatasetSplit {
    std::vector<std::int64_t> train;
    std::vector<std::int64_t> validation;
    std::vector<std::int64_t> test;
    int lead_count = 11;
};

/**
 * Chronological split of eligible targets: the last 20% become test, the last
 * 15% of the remainder become validation, the rest train. A validation target
 * whose observation window would overlap a train or test window is dropped
 * (validation sits between train and test, so it absorbs both boundaries);
 * if train and test still touch because validation emptied out, train loses
 * its newest targets.
 */
DatasetSplit build_split(const FieldSequence& archive, const FilterParams& params = {});

/// True iff no observation serves two splits in conflicting roles, i.e. all
/// cross-split target pairs are at least lead_count + 1 steps apart.
bool split_is_disjoint(const DatasetSplit& split);

}  // namespace lagcast
