#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "anomex/error.hpp"
#include "anomex/image.hpp"

namespace anomex::shap {

/// Axis-aligned pixel rectangle.
struct Region {
  std::size_t y = 0;
  std::size_t x = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t area() const noexcept { return height * width; }
};

struct TreeNode {
  Region region;
  int left = -1;  // -1 on leaves
  int right = -1;
  int depth = 0;

  bool is_leaf() const noexcept { return left < 0; }
};

/// Binary tree of rectangles stored in preorder; node 0 is the whole image.
class PartitionTree {
 public:
  const std::vector<TreeNode>& nodes() const noexcept { return nodes_; }
  const TreeNode& node(std::size_t i) const { return nodes_[i]; }
  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t height() const noexcept { return nodes_.empty() ? 0 : nodes_[0].region.height; }
  std::size_t width() const noexcept { return nodes_.empty() ? 0 : nodes_[0].region.width; }

  std::size_t levels() const {
    int deepest = 0;
    for (const auto& n : nodes_) deepest = std::max(deepest, n.depth);
    return static_cast<std::size_t>(deepest) + 1;
  }

  std::vector<std::size_t> leaves() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].is_leaf()) out.push_back(i);
    }
    return out;
  }

 private:
  friend PartitionTree build_partition_tree(std::size_t, std::size_t, std::size_t);
  std::vector<TreeNode> nodes_;
};

namespace detail {

inline int build_node(std::vector<TreeNode>& nodes, Region r, int depth, std::size_t min_leaf) {
  const int index = static_cast<int>(nodes.size());
  nodes.push_back({r, -1, -1, depth});
  if (r.height <= min_leaf && r.width <= min_leaf) return index;
  Region a = r;
  Region b = r;
  if (r.height >= r.width) {
    a.height = r.height / 2;
    b.y = r.y + a.height;
    b.height = r.height - a.height;
  } else {
    a.width = r.width / 2;
    b.x = r.x + a.width;
    b.width = r.width - a.width;
  }
  const int left = build_node(nodes, a, depth + 1, min_leaf);
  const int right = build_node(nodes, b, depth + 1, min_leaf);
  nodes[static_cast<std::size_t>(index)].left = left;
  nodes[static_cast<std::size_t>(index)].right = right;
  return index;
}

}  // namespace detail

/// Bisects the longer axis (rows on ties) at its midpoint until both sides
/// are <= min_leaf.
inline PartitionTree build_partition_tree(std::size_t height, std::size_t width, std::size_t min_leaf) {
  if (min_leaf < 1) throw InvalidArgument("build_partition_tree: min_leaf must be >= 1");
  if (height == 0 || width == 0) throw ShapeError("build_partition_tree: empty image");
  PartitionTree tree;
  detail::build_node(tree.nodes_, {0, 0, height, width}, 0, min_leaf);
  return tree;
}

struct TraceEntry {
  std::size_t node = 0;
  double credit = 0.0;
  std::size_t evaluations = 0;  // running total after this expansion
};

struct ShapExplanation {
  ScalarMap pixel_attribution;       // beta_S: credit density, anomaly-signed
  std::size_t evaluations_used = 0;
  std::vector<double> credit;        // per tree node; meaningful where assigned
  std::vector<bool> assigned;
  std::vector<bool> expanded;
  std::vector<std::size_t> frontier; // nodes whose credit was spread over pixels
  double max_ordering_gap = 0.0;     // additivity self-check
  std::vector<TraceEntry> trace;
};

/// Hierarchical two-ordering attribution of g(S) = mse(input, input with S
/// replaced by recon). Nodes are evaluated against the unmasked image (empty
/// context) and expanded best-first by |credit| * area, ties by preorder.
/// `budget` caps the number of g evaluations; std::nullopt means unlimited.
inline ShapExplanation partition_attribution(const RgbImage& input, const RgbImage& recon, const PartitionTree& tree,
                                             std::optional<std::size_t> budget) {
  require_same_shape(input, recon, "partition_attribution");
  if (tree.height() != input.height() || tree.width() != input.width()) {
    throw ShapeError("partition_attribution: tree does not match image shape");
  }
  const std::size_t min_budget = 2 * tree.levels();
  if (budget && *budget < min_budget) {
    throw InvalidArgument("partition_attribution: budget " + std::to_string(*budget) + " < " +
                          std::to_string(min_budget) + " (2 per tree level)");
  }

  RgbImage scratch = input;
  auto g = [&](const Region& r) {
    for (std::size_t y = r.y; y < r.y + r.height; ++y) {
      for (std::size_t x = r.x; x < r.x + r.width; ++x) {
        for (std::size_t c = 0; c < 3; ++c) scratch(y, x, c) = recon(y, x, c);
      }
    }
    const double value = mse(input, scratch);
    for (std::size_t y = r.y; y < r.y + r.height; ++y) {
      for (std::size_t x = r.x; x < r.x + r.width; ++x) {
        for (std::size_t c = 0; c < 3; ++c) scratch(y, x, c) = input(y, x, c);
      }
    }
    return value;
  };

  const auto& nodes = tree.nodes();
  ShapExplanation ex;
  ex.credit.assign(nodes.size(), 0.0);
  ex.assigned.assign(nodes.size(), false);
  ex.expanded.assign(nodes.size(), false);
  std::vector<double> g_of(nodes.size(), 0.0);  // g(region) for assigned nodes

  const double g_empty = mse(input, input);
  g_of[0] = g(nodes[0].region);
  ex.evaluations_used = 2;
  ex.credit[0] = g_of[0] - g_empty;
  ex.assigned[0] = true;
  ex.trace.push_back({0, ex.credit[0], ex.evaluations_used});

  struct Item {
    double priority;
    std::size_t node;
    bool operator<(const Item& o) const {
      // max-heap on priority, then smallest preorder index first
      return priority < o.priority || (priority == o.priority && node > o.node);
    }
  };
  std::priority_queue<Item> queue;
  auto push = [&](std::size_t i) {
    if (!nodes[i].is_leaf()) queue.push({std::abs(ex.credit[i]) * static_cast<double>(nodes[i].region.area()), i});
  };
  push(0);

  while (!queue.empty()) {
    const Item top = queue.top();
    if (top.priority == 0.0) break;
    if (budget && ex.evaluations_used + 2 > *budget) break;
    queue.pop();
    const std::size_t r = top.node;
    const auto a = static_cast<std::size_t>(nodes[r].left);
    const auto b = static_cast<std::size_t>(nodes[r].right);
    g_of[a] = g(nodes[a].region);
    g_of[b] = g(nodes[b].region);
    ex.evaluations_used += 2;

    const double a_first = g_of[a] - g_empty;  // A joins an empty coalition
    const double a_last = g_of[r] - g_of[b];   // A joins after B
    const double b_first = g_of[b] - g_empty;
    const double b_last = g_of[r] - g_of[a];
    ex.max_ordering_gap = std::max({ex.max_ordering_gap, std::abs(a_first - a_last), std::abs(b_first - b_last)});
    // Keeps children summing to the parent's credit even when g is not additive.
    const double correction = 0.5 * (ex.credit[r] - (g_of[r] - g_empty));
    ex.credit[a] = 0.5 * (a_first + a_last) + correction;
    ex.credit[b] = 0.5 * (b_first + b_last) + correction;
    ex.assigned[a] = ex.assigned[b] = true;
    ex.expanded[r] = true;
    ex.trace.push_back({a, ex.credit[a], ex.evaluations_used});
    ex.trace.push_back({b, ex.credit[b], ex.evaluations_used});
    push(a);
    push(b);
  }

  ex.pixel_attribution = ScalarMap(input.height(), input.width());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (!ex.assigned[i] || ex.expanded[i]) continue;
    ex.frontier.push_back(i);
    const Region& rg = nodes[i].region;
    const double density = ex.credit[i] / static_cast<double>(rg.area());
    for (std::size_t y = rg.y; y < rg.y + rg.height; ++y) {
      for (std::size_t x = rg.x; x < rg.x + rg.width; ++x) ex.pixel_attribution(y, x) = density;
    }
  }
  return ex;
}

/// One JSON object per line: node, region, credit, running evaluation count.
inline void write_trace_jsonl(const std::filesystem::path& path, const PartitionTree& tree,
                              const ShapExplanation& ex) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& t : ex.trace) {
    const Region& r = tree.node(t.node).region;
    nlohmann::ordered_json j;
    j["node"] = t.node;
    j["y"] = r.y;
    j["x"] = r.x;
    j["height"] = r.height;
    j["width"] = r.width;
    j["credit"] = t.credit;
    j["evaluations"] = t.evaluations;
    out << j.dump() << '\n';
  }
}

}  // namespace anomex::shap
