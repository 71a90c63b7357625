#include "rmld/brownian_path.hpp"

#include <algorithm>

namespace rmld {

BrownianPath::BrownianPath(Eigen::Index dim, double cell_length, std::size_t cells, Rng rng)
    : dim_(dim), cell_length_(cell_length), rng_(std::move(rng)) {
  if (dim < 1) throw Error(ErrorKind::invalid_argument, "path dimension must be positive");
  if (!(cell_length > 0) || !std::isfinite(cell_length))
    throw Error(ErrorKind::invalid_argument, "cell length must be positive and finite");
  cells_.reserve(cells);
  for (std::size_t i = 0; i < cells; ++i) {
    Cell c;
    c.stats = sample_interval(cell_length, dim, rng_);
    c.pieces.push_back({0.0, c.stats});
    cells_.push_back(std::move(c));
  }
}

PathPoint BrownianPath::normalize(PathPoint p) const {
  if (!(p.offset >= 0) || !std::isfinite(p.offset))
    throw Error(ErrorKind::invalid_argument, "path offset must be finite and nonnegative");
  if (p.offset >= cell_length_) {
    const auto whole = static_cast<std::size_t>(std::floor(p.offset / cell_length_));
    p.cell += whole;
    p.offset -= static_cast<double>(whole) * cell_length_;
    if (p.offset < 0 || p.offset >= cell_length_) p.offset = 0;
  }
  if (p.cell > cells_.size() || (p.cell == cells_.size() && p.offset > 0))
    throw Error(ErrorKind::invalid_argument, "path point beyond the end of the path");
  return p;
}

void BrownianPath::ensure_boundary(PathPoint p) {
  if (p.offset == 0) return;
  auto& pieces = cells_[p.cell].pieces;
  // Last piece starting at or before the offset.
  auto it = std::upper_bound(pieces.begin(), pieces.end(), p.offset,
                             [](double off, const Piece& piece) { return off < piece.offset; });
  --it;
  if (it->offset == p.offset) return;
  auto halves = split(it->stats, p.offset - it->offset, rng_);
  it->stats = std::move(halves.left);
  pieces.insert(it + 1, Piece{p.offset, std::move(halves.right)});
}

IntervalStats<double> BrownianPath::within_cell(std::size_t cell, double from, double to) const {
  const auto& c = cells_[cell];
  if (from == 0 && to >= cell_length_) return c.stats;
  auto acc = zero_interval<double>(dim_);
  for (const auto& piece : c.pieces) {
    if (piece.offset >= from && piece.offset < to) acc = compose(acc, piece.stats);
  }
  return acc;
}

IntervalStats<double> BrownianPath::interval(PathPoint from, PathPoint to) {
  from = normalize(from);
  to = normalize(to);
  if (to.cell < from.cell || (to.cell == from.cell && to.offset < from.offset))
    throw Error(ErrorKind::invalid_argument, "interval end precedes its start");
  ensure_boundary(from);
  ensure_boundary(to);

  if (from.cell == to.cell) return within_cell(from.cell, from.offset, to.offset);
  auto acc = within_cell(from.cell, from.offset, cell_length_);
  for (std::size_t c = from.cell + 1; c < to.cell; ++c) acc = compose(acc, cells_[c].stats);
  if (to.offset > 0) acc = compose(acc, within_cell(to.cell, 0, to.offset));
  return acc;
}

}  // namespace rmld
