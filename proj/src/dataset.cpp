#include "ptlab/dataset.hpp"

#include "ptlab/errors.hpp"

namespace ptlab {

void SeqDataset::validate() const {
    require(!examples.empty(), ErrorKind::InvalidInput, "dataset has no examples");
    const std::size_t dd = d(), mm = m();
    require(dd > 0 && mm > 0, ErrorKind::InvalidInput, "dataset examples are empty");
    for (const auto& ex : examples) {
        require(ex.X.rows() == dd && ex.X.cols() == mm, ErrorKind::InvalidInput, "examples disagree on X shape");
        require(ex.Y.rows() == dd && ex.Y.cols() == mm, ErrorKind::InvalidInput, "Y shape differs from X");
        require(ex.X.all_finite() && ex.Y.all_finite(), ErrorKind::InvalidInput, "dataset has non-finite entries");
    }
    require(!loss_mask.empty(), ErrorKind::InvalidInput, "loss mask is empty");
    for (std::size_t c : loss_mask) require(c < mm, ErrorKind::InvalidInput, "loss mask index out of range");
}

}  // namespace ptlab
