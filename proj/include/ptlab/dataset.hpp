#pragma once

#include <cstddef>
#include <vector>

#include "ptlab/matrix.hpp"

namespace ptlab {

struct SeqExample {
    Matrix X;  // d x m input tokens
    Matrix Y;  // d x m target tokens
};

/// Sequence-to-sequence dataset. Only the output columns listed in loss_mask
/// are supervised.
struct SeqDataset {
    std::vector<SeqExample> examples;
    std::vector<std::size_t> loss_mask;

    std::size_t d() const noexcept { return examples.empty() ? 0 : examples.front().X.rows(); }
    std::size_t m() const noexcept { return examples.empty() ? 0 : examples.front().X.cols(); }
    std::size_t size() const noexcept { return examples.size(); }

    /// Shapes agree, targets are finite and mask indices are in range.
    void validate() const;
};

}  // namespace ptlab
