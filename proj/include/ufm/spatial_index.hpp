#pragma once

#include <algorithm>
#include <utility>
#include <vector>

#include <boost/geometry.hpp>
#include <boost/geometry/index/rtree.hpp>

#include "ufm/common.hpp"

namespace ufm {

/// Bulk-loaded R-tree over axis-aligned boxes tagged with an integer id.
/// Query results are returned sorted by id so callers see a stable order.
template <int Dim>
class BoxIndex {
 public:
  using Point = boost::geometry::model::point<double, Dim, boost::geometry::cs::cartesian>;
  using Box = boost::geometry::model::box<Point>;
  using Entry = std::pair<Box, int>;
  using Vec = Eigen::Matrix<double, Dim, 1>;

  void add(const Vec& lo, const Vec& hi, int id) { pending_.emplace_back(make_box(lo, hi), id); }

  /// Builds the tree from everything added so far.
  void build() {
    tree_ = Tree(pending_.begin(), pending_.end());
    pending_.clear();
  }

  std::size_t size() const { return tree_.size(); }

  void query(const Vec& lo, const Vec& hi, std::vector<int>& out) const {
    out.clear();
    scratch_.clear();
    tree_.query(boost::geometry::index::intersects(make_box(lo, hi)), std::back_inserter(scratch_));
    out.reserve(scratch_.size());
    for (const Entry& e : scratch_) out.push_back(e.second);
    std::sort(out.begin(), out.end());
  }

 private:
  using Tree = boost::geometry::index::rtree<Entry, boost::geometry::index::rstar<16>>;

  static Point make_point(const Vec& v) {
    Point p;
    if constexpr (Dim >= 1) boost::geometry::set<0>(p, v[0]);
    if constexpr (Dim >= 2) boost::geometry::set<1>(p, v[1]);
    if constexpr (Dim >= 3) boost::geometry::set<2>(p, v[2]);
    return p;
  }

  static Box make_box(const Vec& lo, const Vec& hi) { return {make_point(lo), make_point(hi)}; }

  Tree tree_;
  std::vector<Entry> pending_;
  mutable std::vector<Entry> scratch_;
};

}  // namespace ufm
