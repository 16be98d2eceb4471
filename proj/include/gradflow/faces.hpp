#pragma once

#include <cstddef>
#include <vector>

#include "gradflow/grid.hpp"

namespace gradflow {

/// Interior cell faces along one axis, as (left cell, right cell) index pairs.
/// Boundary faces are omitted: the flow modules impose zero flux there, so a
/// face that is never visited carries none. Conservative updates route every
/// interior flux into exactly two cells with opposite signs, which is what
/// makes discrete mass conservation exact.
template <typename Fn>
void for_each_face(const Grid& g, int axis, Fn&& fn) {
    const int n = g.axis(axis).nodes;
    const std::size_t st = g.stride(axis);
    if (g.dimension() == 1) {
        for (int i = 0; i + 1 < n; ++i)
            fn(static_cast<std::size_t>(i), static_cast<std::size_t>(i + 1));
        return;
    }
    const int n_other = g.axis(1 - axis).nodes;
    const std::size_t st_other = g.stride(1 - axis);
    for (int line = 0; line < n_other; ++line) {
        std::size_t base = static_cast<std::size_t>(line) * st_other;
        for (int i = 0; i + 1 < n; ++i) {
            std::size_t left = base + static_cast<std::size_t>(i) * st;
            fn(left, left + st);
        }
    }
}

}  // namespace gradflow
