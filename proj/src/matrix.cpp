#include "hybridpipe/matrix.hpp"

#include <algorithm>
#include <string>

#include "hybridpipe/errors.hpp"

namespace hybridpipe {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw Error(ErrorCode::ShapeMismatch, "matrix data has " + std::to_string(data_.size()) +
                                              " elements, expected " + std::to_string(rows_ * cols_));
  }
}

Matrix Matrix::slice_rows(std::size_t begin, std::size_t count) const {
  if (begin + count > rows_) {
    throw Error(ErrorCode::ShapeMismatch, "row slice out of range");
  }
  Matrix out(count, cols_);
  std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(begin * cols_), count * cols_, out.data_.begin());
  return out;
}

}  // namespace hybridpipe
