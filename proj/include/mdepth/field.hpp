#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace mdepth {

// Dense row-major H x W x C array of doubles. Pixel (x, y) channel c lives at
// ((y * width) + x) * channels + c.
struct Field {
  int height = 1;
  int width = 1;
  int channels = 1;
  std::vector<double> data;

  Field() : data(1, 0.0) {}
  Field(int h, int w, int c, double fill = 0.0)
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}
  Field(int h, int w, int c, std::vector<double> values);

  static Field scalar(double v) { return Field(1, 1, 1, v); }

  std::size_t size() const { return data.size(); }
  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
  bool is_scalar() const { return data.size() == 1; }
  bool same_shape(const Field& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }

  std::size_t index(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  double& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
  double at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }
};

// H x W binary map. Used for validity masks, object masks and in-bounds flags.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  std::size_t size() const { return data.size(); }
  std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count() const;
  bool same_shape(const Mask& o) const { return height == o.height && width == o.width; }
};

Mask mask_and(const Mask& a, const Mask& b);
Mask mask_or(const Mask& a, const Mask& b);
Mask mask_not(const Mask& a);

}  // namespace mdepth
