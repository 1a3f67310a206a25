#ifndef PRNU_SAMPLING_HPP
#define PRNU_SAMPLING_HPP

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "prnu/core.hpp"

namespace prnu {

/// Lazily draws non-overlapping pseudorandom subsets of T usable pixels.
///
/// The subsets are consecutive chunks of a seeded Fisher–Yates permutation of
/// the usable pixel indices; only the prefix that is actually consumed gets
/// shuffled.
class SubsetStream {
public:
    SubsetStream(const PixelMask& mask, std::size_t subset_size, std::uint64_t seed)
        : subset_size_(subset_size), rng_(seed) {
        if (subset_size == 0) throw Error(ErrorKind::domain, "subset size must be >= 1");
        indices_.reserve(mask.usable_count());
        for (std::size_t i = 0; i < mask.size(); ++i) {
            if (mask[i]) indices_.push_back(i);
        }
    }

    std::size_t usable() const noexcept { return indices_.size(); }
    std::size_t capacity() const noexcept { return indices_.size() / subset_size_; }
    std::size_t drawn() const noexcept { return cursor_ / subset_size_; }

    std::optional<std::vector<std::size_t>> next() {
        if (cursor_ + subset_size_ > indices_.size()) return std::nullopt;
        const std::size_t n = indices_.size();
        for (std::size_t pos = cursor_; pos < cursor_ + subset_size_; ++pos) {
            std::uniform_int_distribution<std::size_t> pick(pos, n - 1);
            std::swap(indices_[pos], indices_[pick(rng_)]);
        }
        std::vector<std::size_t> subset(indices_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                        indices_.begin() + static_cast<std::ptrdiff_t>(cursor_ + subset_size_));
        cursor_ += subset_size_;
        return subset;
    }

private:
    std::size_t subset_size_;
    std::size_t cursor_ = 0;
    Rng rng_;
    std::vector<std::size_t> indices_;
};

/// At most `max_subsets` non-overlapping subsets of exactly T usable pixels.
inline std::vector<std::vector<std::size_t>> partition_subsets(const PixelMask& mask, std::size_t subset_size,
                                                               std::size_t max_subsets, std::uint64_t seed) {
    SubsetStream stream(mask, subset_size, seed);
    if (stream.usable() < subset_size) {
        throw Error(ErrorKind::insufficient_data, "only " + std::to_string(stream.usable()) +
                                                      " usable pixels for subsets of " + std::to_string(subset_size));
    }
    std::vector<std::vector<std::size_t>> subsets;
    while (subsets.size() < max_subsets) {
        auto s = stream.next();
        if (!s) break;
        subsets.push_back(std::move(*s));
    }
    return subsets;
}

}  // namespace prnu

#endif  // PRNU_SAMPLING_HPP
