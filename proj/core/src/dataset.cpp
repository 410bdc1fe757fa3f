/**
 * @file dataset.cpp
 */
#include "lagcast/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "lagcast/units.hpp"

namespace lagcast {

namespace {

bool windows_overlap(std::int64_t a, std::int64_t b, int lead_count) {
    const std::int64_t gap = a > b ? a - b : b - a;
    return gap <= lead_count;
}

}  // namespace

DatasetSplit build_split(const FieldSequence& archive, const FilterParams& params) {
    const std::int64_t n = static_cast<std::int64_t>(archive.size());
    if (n < params.lead_count + 1)
        throw ValidationError("build_split: archive has " + std::to_string(n) + " frames, need at least " +
                              std::to_string(params.lead_count + 1));

    std::vector<std::int64_t> eligible;
    for (std::int64_t t = params.lead_count; t < n; ++t)
        if (units::is_rainy_enough(archive[static_cast<std::size_t>(t)], params.pixel_threshold,
                                   params.area_fraction))
            eligible.push_back(t);

    DatasetSplit split;
    split.lead_count = params.lead_count;
    if (eligible.empty()) return split;

    const std::size_t n_test =
        static_cast<std::size_t>(std::llround(params.test_fraction * static_cast<double>(eligible.size())));
    const std::size_t n_rem = eligible.size() - n_test;
    const std::size_t n_val =
        static_cast<std::size_t>(std::llround(params.validation_fraction * static_cast<double>(n_rem)));
    const std::size_t n_train = n_rem - n_val;

    split.train.assign(eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.validation.assign(eligible.begin() + static_cast<std::ptrdiff_t>(n_train),
                            eligible.begin() + static_cast<std::ptrdiff_t>(n_rem));
    split.test.assign(eligible.begin() + static_cast<std::ptrdiff_t>(n_rem), eligible.end());

    // validation absorbs the boundary overlaps on both sides
    auto& val = split.validation;
    while (!val.empty() && !split.train.empty() && windows_overlap(val.front(), split.train.back(), params.lead_count))
        val.erase(val.begin());
    while (!val.empty() && !split.test.empty() && windows_overlap(val.back(), split.test.front(), params.lead_count))
        val.pop_back();
    // if nothing is left between them, train gives way so test stays canonical
    while (!split.train.empty() && !split.test.empty() &&
           windows_overlap(split.train.back(), split.test.front(), params.lead_count))
        split.train.pop_back();

    return split;
}

bool split_is_disjoint(const DatasetSplit& split) {
    const std::vector<std::int64_t>* sets[3] = {&split.train, &split.validation, &split.test};
    for (int a = 0; a < 3; ++a)
        for (int b = a + 1; b < 3; ++b)
            for (std::int64_t x : *sets[a])
                for (std::int64_t y : *sets[b])
                    if (windows_overlap(x, y, split.lead_count)) return false;
    return true;
}

}  // namespace lagcast
