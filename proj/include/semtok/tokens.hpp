#pragma once

#include <cstddef>
#include <vector>

#include "semtok/tensor.hpp"

namespace semtok {

inline constexpr std::size_t kClassRow = 0;
inline constexpr std::size_t kBudgetRow = 1;
inline constexpr std::size_t kSpecialRows = 2;

// Compact token buffer: row 0 is the class token, row 1 the budget token,
// rows 2.. the surviving patch tokens in increasing original order.
struct TokenSequence {
  Tensor tokens;
  std::vector<std::size_t> positions;  // original patch index of each patch row
  std::vector<bool> alive;             // one flag per original patch

  std::size_t active() const { return positions.size(); }
  std::size_t num_patches() const { return alive.size(); }
  std::size_t rows() const { return kSpecialRows + active(); }

  // Throws ConsistencyError when the row count, positions and alive mask
  // disagree.
  void check() const;
};

}  // namespace semtok
