#include "mdepth/field.hpp"

#include <algorithm>
#include <utility>

#include "mdepth/errors.hpp"

namespace mdepth {

Field::Field(int h, int w, int c, std::vector<double> values)
    : height(h), width(w), channels(c), data(std::move(values)) {
  if (data.size() != static_cast<std::size_t>(h) * w * c) {
    throw ContractViolation("Field: value count does not match shape");
  }
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](auto v) { return v != 0; }));
}

namespace {
template <typename Op>
Mask combine(const Mask& a, const Mask& b, Op op) {
  if (!a.same_shape(b)) throw ContractViolation("mask shape mismatch");
  Mask out(a.height, a.width);
  for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = op(a.data[i] != 0, b.data[i] != 0) ? 1 : 0;
  return out;
}
}  // namespace

Mask mask_and(const Mask& a, const Mask& b) {
  return combine(a, b, [](bool x, bool y) { return x && y; });
}

Mask mask_or(const Mask& a, const Mask& b) {
  return combine(a, b, [](bool x, bool y) { return x || y; });
}

Mask mask_not(const Mask& a) {
  Mask out(a.height, a.width);
  for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] ? 0 : 1;
  return out;
}

}  // namespace mdepth
