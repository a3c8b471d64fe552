#include "mvseg/grid.hpp"

#include <array>
#include <utility>

namespace mvseg {
namespace {

// Flood-fills every unvisited pixel with value `fg` and returns the number
// of components; `touches_border` collects, per component, whether it
// reaches the image edge.
int label_components(const Mask& m, bool fg, bool eight_connected,
                     std::vector<bool>* touches_border) {
  const int rows = m.rows();
  const int cols = m.cols();
  std::vector<int> label(m.size(), -1);
  std::vector<std::pair<int, int>> stack;
  static constexpr std::array<std::pair<int, int>, 8> kOffsets = {
      {{-1, 0}, {1, 0}, {0, -1}, {0, 1}, {-1, -1}, {-1, 1}, {1, -1}, {1, 1}}};
  const int n_offsets = eight_connected ? 8 : 4;
  int count = 0;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const auto idx = static_cast<std::size_t>(r) * cols + c;
      if ((m(r, c) != 0) != fg || label[idx] >= 0) continue;
      bool border = false;
      label[idx] = count;
      stack.emplace_back(r, c);
      while (!stack.empty()) {
        auto [y, x] = stack.back();
        stack.pop_back();
        if (y == 0 || x == 0 || y == rows - 1 || x == cols - 1) border = true;
        for (int k = 0; k < n_offsets; ++k) {
          const int ny = y + kOffsets[k].first;
          const int nx = x + kOffsets[k].second;
          if (!m.in_bounds(ny, nx)) continue;
          const auto nidx = static_cast<std::size_t>(ny) * cols + nx;
          if ((m(ny, nx) != 0) != fg || label[nidx] >= 0) continue;
          label[nidx] = count;
          stack.emplace_back(ny, nx);
        }
      }
      if (touches_border) touches_border->push_back(border);
      ++count;
    }
  }
  return count;
}

}  // namespace

MaskTopology mask_topology(const Mask& m) {
  MaskTopology t;
  t.components = label_components(m, true, true, nullptr);
  std::vector<bool> border;
  label_components(m, false, false, &border);
  for (bool b : border) t.holes += !b;
  return t;
}

}  // namespace mvseg
