#pragma once

// Undirected Markov-network structure, chordal completion, junction trees and
// immorality-free orientations (I-maps) of the completed graph.

#include <deltaai/common.hpp>

#include <map>
#include <numeric>
#include <optional>
#include <queue>
#include <set>
#include <utility>

namespace deltaai {

using Edge = std::pair<int, int>;

class UndirectedGraph {
 public:
  UndirectedGraph() = default;
  explicit UndirectedGraph(int num_vars) : adj_(static_cast<std::size_t>(num_vars)) {}

  UndirectedGraph(int num_vars, std::span<const Edge> edges) : UndirectedGraph(num_vars) {
    for (auto [u, v] : edges) insert(u, v);
    for (auto& n : adj_) {
      std::sort(n.begin(), n.end());
      n.erase(std::unique(n.begin(), n.end()), n.end());
    }
  }

  int num_vars() const { return static_cast<int>(adj_.size()); }

  const std::vector<int>& neighbors(int v) const { return adj_[static_cast<std::size_t>(v)]; }
  int degree(int v) const { return static_cast<int>(neighbors(v).size()); }

  bool adjacent(int u, int v) const {
    const auto& n = neighbors(u);
    return std::binary_search(n.begin(), n.end(), v);
  }

  std::size_t num_edges() const {
    std::size_t total = 0;
    for (const auto& n : adj_) total += n.size();
    return total / 2;
  }

  /// Edges as (u, v) with u < v, in lexicographic order.
  std::vector<Edge> edges() const {
    std::vector<Edge> out;
    for (int u = 0; u < num_vars(); ++u)
      for (int v : neighbors(u))
        if (u < v) out.emplace_back(u, v);
    return out;
  }

  UndirectedGraph with_edges(std::span<const Edge> extra) const {
    auto all = edges();
    all.insert(all.end(), extra.begin(), extra.end());
    return UndirectedGraph(num_vars(), all);
  }

  /// Same vertex index space; keeps only edges with both ends in `keep`.
  UndirectedGraph induced(std::span<const int> keep) const {
    std::vector<char> in(adj_.size(), 0);
    for (int v : keep) in[static_cast<std::size_t>(v)] = 1;
    std::vector<Edge> kept;
    for (auto [u, v] : edges())
      if (in[static_cast<std::size_t>(u)] && in[static_cast<std::size_t>(v)]) kept.emplace_back(u, v);
    return UndirectedGraph(num_vars(), kept);
  }

  bool contains_edges_of(const UndirectedGraph& other) const {
    if (other.num_vars() != num_vars()) return false;
    for (auto [u, v] : other.edges())
      if (!adjacent(u, v)) return false;
    return true;
  }

  friend bool operator==(const UndirectedGraph&, const UndirectedGraph&) = default;

 private:
  void insert(int u, int v) {
    if (u < 0 || v < 0 || u >= num_vars() || v >= num_vars())
      throw std::out_of_range("edge endpoint out of range");
    if (u == v) throw std::invalid_argument("self-loops are not allowed");
    adj_[static_cast<std::size_t>(u)].push_back(v);
    adj_[static_cast<std::size_t>(v)].push_back(u);
  }

  std::vector<std::vector<int>> adj_;
};

/// FNV-1a over the edge list; identifies the graph an I-map orients.
inline std::uint64_t graph_id(const UndirectedGraph& g) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t x) {
    for (int i = 0; i < 8; ++i) {
      h ^= (x >> (8 * i)) & 0xFFU;
      h *= 1099511628211ULL;
    }
  };
  mix(static_cast<std::uint64_t>(g.num_vars()));
  for (auto [u, v] : g.edges()) {
    mix(static_cast<std::uint64_t>(u));
    mix(static_cast<std::uint64_t>(v));
  }
  return h;
}

// ---------------------------------------------------------------------------
// Standard graph families used by the experiments.

inline UndirectedGraph make_chain(int n) {
  std::vector<Edge> e;
  for (int i = 0; i + 1 < n; ++i) e.emplace_back(i, i + 1);
  return UndirectedGraph(n, e);
}

inline UndirectedGraph make_cycle(int n) {
  std::vector<Edge> e;
  for (int i = 0; i < n; ++i) e.emplace_back(i, (i + 1) % n);
  return UndirectedGraph(n, e);
}

inline UndirectedGraph make_complete(int n) {
  std::vector<Edge> e;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) e.emplace_back(i, j);
  return UndirectedGraph(n, e);
}

/// Triangulated ladder: two rails of n/2 vertices, rungs between them and one
/// diagonal per square, so the graph is chordal. Vertex 2i is on the top rail
/// and 2i+1 on the bottom rail.
inline UndirectedGraph make_ladder(int n) {
  if (n % 2 != 0) throw std::invalid_argument("ladder needs an even vertex count");
  const int len = n / 2;
  std::vector<Edge> e;
  for (int i = 0; i < len; ++i) {
    e.emplace_back(2 * i, 2 * i + 1);
    if (i + 1 < len) {
      e.emplace_back(2 * i, 2 * i + 2);
      e.emplace_back(2 * i + 1, 2 * i + 3);
      e.emplace_back(2 * i + 1, 2 * i + 2);
    }
  }
  return UndirectedGraph(n, e);
}

/// rows x cols 4-neighbour grid, vertex r*cols + c.
inline UndirectedGraph make_lattice(int rows, int cols) {
  std::vector<Edge> e;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const int v = r * cols + c;
      if (c + 1 < cols) e.emplace_back(v, v + 1);
      if (r + 1 < rows) e.emplace_back(v, v + cols);
    }
  return UndirectedGraph(rows * cols, e);
}

// ---------------------------------------------------------------------------
// Chordality.

struct Chordalization {
  UndirectedGraph graph;
  std::vector<Edge> fill_edges;
  std::vector<int> elimination_order;
};

/// Greedy min-fill elimination with uniformly random tie-breaking.
inline Chordalization min_fill_elimination(const UndirectedGraph& g, std::uint64_t seed) {
  const int n = g.num_vars();
  Rng rng(seed);
  std::vector<std::vector<char>> adj(static_cast<std::size_t>(n), std::vector<char>(static_cast<std::size_t>(n), 0));
  std::vector<std::vector<int>> nbr(static_cast<std::size_t>(n));
  for (int v = 0; v < n; ++v) {
    nbr[static_cast<std::size_t>(v)] = g.neighbors(v);
    for (int w : g.neighbors(v)) adj[static_cast<std::size_t>(v)][static_cast<std::size_t>(w)] = 1;
  }
  auto fill_of = [&](int v) {
    const auto& nb = nbr[static_cast<std::size_t>(v)];
    int missing = 0;
    for (std::size_t i = 0; i < nb.size(); ++i)
      for (std::size_t j = i + 1; j < nb.size(); ++j)
        if (!adj[static_cast<std::size_t>(nb[i])][static_cast<std::size_t>(nb[j])]) ++missing;
    return missing;
  };

  std::vector<int> fill(static_cast<std::size_t>(n));
  std::vector<char> alive(static_cast<std::size_t>(n), 1), dirty(static_cast<std::size_t>(n), 0);
  for (int v = 0; v < n; ++v) fill[static_cast<std::size_t>(v)] = fill_of(v);

  Chordalization out;
  std::vector<int> ties;
  for (int step = 0; step < n; ++step) {
    int best = std::numeric_limits<int>::max();
    ties.clear();
    for (int v = 0; v < n; ++v) {
      if (!alive[static_cast<std::size_t>(v)]) continue;
      if (dirty[static_cast<std::size_t>(v)]) {
        fill[static_cast<std::size_t>(v)] = fill_of(v);
        dirty[static_cast<std::size_t>(v)] = 0;
      }
      const int f = fill[static_cast<std::size_t>(v)];
      if (f < best) {
        best = f;
        ties.assign(1, v);
      } else if (f == best) {
        ties.push_back(v);
      }
    }
    const int v = ties[std::uniform_int_distribution<std::size_t>(0, ties.size() - 1)(rng)];
    const auto nb = nbr[static_cast<std::size_t>(v)];
    for (std::size_t i = 0; i < nb.size(); ++i)
      for (std::size_t j = i + 1; j < nb.size(); ++j) {
        const int a = nb[i], b = nb[j];
        if (adj[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)]) continue;
        adj[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] = 1;
        adj[static_cast<std::size_t>(b)][static_cast<std::size_t>(a)] = 1;
        nbr[static_cast<std::size_t>(a)].push_back(b);
        nbr[static_cast<std::size_t>(b)].push_back(a);
        out.fill_edges.emplace_back(std::min(a, b), std::max(a, b));
      }
    alive[static_cast<std::size_t>(v)] = 0;
    out.elimination_order.push_back(v);
    for (int w : nb) {
      auto& l = nbr[static_cast<std::size_t>(w)];
      l.erase(std::remove(l.begin(), l.end(), v), l.end());
      dirty[static_cast<std::size_t>(w)] = 1;
      for (int z : l) dirty[static_cast<std::size_t>(z)] = 1;
    }
  }
  std::sort(out.fill_edges.begin(), out.fill_edges.end());
  out.graph = g.with_edges(out.fill_edges);
  return out;
}

inline UndirectedGraph min_fill_chordalize(const UndirectedGraph& g, std::uint64_t seed) {
  return min_fill_elimination(g, seed).graph;
}

struct CardinalitySearch {
  std::vector<int> visit_order;        // order in which MCS numbered the vertices
  std::vector<int> elimination_order;  // reverse of visit_order
  std::vector<std::vector<int>> cliques;
};

/// Maximum cardinality search with random tie-breaking. On a chordal graph the
/// reversed visit order is a perfect elimination ordering and `cliques` are
/// exactly the maximal cliques (each sorted).
inline CardinalitySearch max_cardinality_search(const UndirectedGraph& g, std::uint64_t seed) {
  const int n = g.num_vars();
  Rng rng(seed);
  std::vector<int> label(static_cast<std::size_t>(n), 0);
  std::vector<char> visited(static_cast<std::size_t>(n), 0);
  std::vector<int> label_at_visit;
  CardinalitySearch out;
  std::vector<int> ties;
  for (int step = 0; step < n; ++step) {
    int best = -1;
    ties.clear();
    for (int v = 0; v < n; ++v) {
      if (visited[static_cast<std::size_t>(v)]) continue;
      if (label[static_cast<std::size_t>(v)] > best) {
        best = label[static_cast<std::size_t>(v)];
        ties.assign(1, v);
      } else if (label[static_cast<std::size_t>(v)] == best) {
        ties.push_back(v);
      }
    }
    const int v = ties[std::uniform_int_distribution<std::size_t>(0, ties.size() - 1)(rng)];
    visited[static_cast<std::size_t>(v)] = 1;
    out.visit_order.push_back(v);
    label_at_visit.push_back(best);
    for (int w : g.neighbors(v))
      if (!visited[static_cast<std::size_t>(w)]) ++label[static_cast<std::size_t>(w)];
  }
  // The clique {v_i} + earlier neighbours is maximal iff the next vertex's
  // label does not exceed v_i's label (or v_i is last).
  std::vector<int> pos(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) pos[static_cast<std::size_t>(out.visit_order[static_cast<std::size_t>(i)])] = i;
  for (int i = 0; i < n; ++i) {
    const bool closes = (i + 1 == n) || label_at_visit[static_cast<std::size_t>(i) + 1] <= label_at_visit[static_cast<std::size_t>(i)];
    if (!closes) continue;
    const int v = out.visit_order[static_cast<std::size_t>(i)];
    std::vector<int> clique{v};
    for (int w : g.neighbors(v))
      if (pos[static_cast<std::size_t>(w)] < i) clique.push_back(w);
    std::sort(clique.begin(), clique.end());
    out.cliques.push_back(std::move(clique));
  }
  out.elimination_order.assign(out.visit_order.rbegin(), out.visit_order.rend());
  return out;
}

/// True iff `order` is a perfect elimination ordering of g: each vertex's
/// neighbours later in the order form a clique.
inline bool is_perfect_elimination_order(const UndirectedGraph& g, std::span<const int> order) {
  const int n = g.num_vars();
  if (static_cast<int>(order.size()) != n) return false;
  std::vector<int> pos(static_cast<std::size_t>(n), -1);
  for (int i = 0; i < n; ++i) pos[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = i;
  // Tarjan-Yannakakis: check only the earliest later neighbour.
  for (int v : order) {
    int first = -1;
    for (int w : g.neighbors(v))
      if (pos[static_cast<std::size_t>(w)] > pos[static_cast<std::size_t>(v)] &&
          (first < 0 || pos[static_cast<std::size_t>(w)] < pos[static_cast<std::size_t>(first)]))
        first = w;
    if (first < 0) continue;
    for (int w : g.neighbors(v))
      if (w != first && pos[static_cast<std::size_t>(w)] > pos[static_cast<std::size_t>(v)] && !g.adjacent(first, w))
        return false;
  }
  return true;
}

inline bool check_chordal(const UndirectedGraph& g) {
  return is_perfect_elimination_order(g, max_cardinality_search(g, 0).elimination_order);
}

// ---------------------------------------------------------------------------
// Junction trees.

struct JunctionTree {
  std::vector<std::vector<int>> cliques;
  std::vector<int> parent;  // -1 for the root of each component (children of the virtual root)
  std::vector<int> roots;   // one root clique per connected component
  int root() const { return roots.empty() ? -1 : roots.front(); }
  std::vector<std::vector<int>> children() const {
    std::vector<std::vector<int>> ch(cliques.size());
    for (std::size_t i = 0; i < parent.size(); ++i)
      if (parent[i] >= 0) ch[static_cast<std::size_t>(parent[i])].push_back(static_cast<int>(i));
    return ch;
  }
};

inline int intersection_size(const std::vector<int>& a, const std::vector<int>& b) {
  int n = 0;
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) ++i;
    else if (*j < *i) ++j;
    else {
      ++n;
      ++i;
      ++j;
    }
  }
  return n;
}

/// Samples a maximum-weight spanning tree of the clique graph under separator
/// sizes (ties broken at random) and roots each component at a uniformly
/// chosen clique. Components hang off a virtual root (parent -1).
inline JunctionTree build_junction_tree(std::vector<std::vector<int>> cliques, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& c : cliques) std::sort(c.begin(), c.end());
  const std::size_t k = cliques.size();
  JunctionTree jt;
  jt.cliques = std::move(cliques);
  jt.parent.assign(k, -1);
  if (k == 0) return jt;

  // Only cliques that share a vertex can be joined by a positive-weight edge.
  std::map<int, std::vector<int>> by_vertex;
  for (std::size_t i = 0; i < k; ++i)
    for (int v : jt.cliques[i]) by_vertex[v].push_back(static_cast<int>(i));
  std::set<std::pair<int, int>> seen;
  struct WeightedEdge {
    int a, b, w;
  };
  std::vector<WeightedEdge> candidates;
  for (const auto& [v, list] : by_vertex)
    for (std::size_t i = 0; i < list.size(); ++i)
      for (std::size_t j = i + 1; j < list.size(); ++j) {
        const int a = std::min(list[i], list[j]), b = std::max(list[i], list[j]);
        if (!seen.emplace(a, b).second) continue;
        candidates.push_back({a, b, intersection_size(jt.cliques[static_cast<std::size_t>(a)], jt.cliques[static_cast<std::size_t>(b)])});
      }
  std::shuffle(candidates.begin(), candidates.end(), rng);
  std::stable_sort(candidates.begin(), candidates.end(), [](const auto& x, const auto& y) { return x.w > y.w; });

  std::vector<int> dsu(k);
  std::iota(dsu.begin(), dsu.end(), 0);
  auto find = [&dsu](int x) {
    while (dsu[static_cast<std::size_t>(x)] != x) x = dsu[static_cast<std::size_t>(x)] = dsu[static_cast<std::size_t>(dsu[static_cast<std::size_t>(x)])];
    return x;
  };
  std::vector<std::vector<int>> tree(k);
  for (const auto& e : candidates) {
    const int ra = find(e.a), rb = find(e.b);
    if (ra == rb) continue;
    dsu[static_cast<std::size_t>(ra)] = rb;
    tree[static_cast<std::size_t>(e.a)].push_back(e.b);
    tree[static_cast<std::size_t>(e.b)].push_back(e.a);
  }

  std::map<int, std::vector<int>> components;
  for (std::size_t i = 0; i < k; ++i) components[find(static_cast<int>(i))].push_back(static_cast<int>(i));
  std::vector<char> done(k, 0);
  for (const auto& [rep, members] : components) {
    const int r = members[std::uniform_int_distribution<std::size_t>(0, members.size() - 1)(rng)];
    jt.roots.push_back(r);
    std::queue<int> q;
    q.push(r);
    done[static_cast<std::size_t>(r)] = 1;
    while (!q.empty()) {
      const int c = q.front();
      q.pop();
      for (int d : tree[static_cast<std::size_t>(c)]) {
        if (done[static_cast<std::size_t>(d)]) continue;
        done[static_cast<std::size_t>(d)] = 1;
        jt.parent[static_cast<std::size_t>(d)] = c;
        q.push(d);
      }
    }
  }
  return jt;
}

/// Every vertex's containing cliques form a connected subtree.
inline bool satisfies_running_intersection(const JunctionTree& jt) {
  std::map<int, std::vector<int>> holders;
  for (std::size_t i = 0; i < jt.cliques.size(); ++i)
    for (int v : jt.cliques[i]) holders[v].push_back(static_cast<int>(i));
  for (const auto& [v, list] : holders) {
    // A set of tree nodes is connected iff exactly one of them has its parent outside the set.
    std::set<int> members(list.begin(), list.end());
    int tops = 0;
    for (int c : list) {
      const int p = jt.parent[static_cast<std::size_t>(c)];
      if (p < 0 || !members.count(p)) ++tops;
    }
    if (tops != 1) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// DAGs and I-maps.

struct Dag {
  int num_vars = 0;
  std::vector<Edge> arcs;        // (from, to)
  std::vector<int> topo_order;   // covers the active vertices only
};

/// An immorality-free orientation of a chordal completion, restricted to an
/// ancestral set of active vertices (all vertices for a full I-map).
class Imap {
 public:
  Imap() = default;

  /// Orients every edge of `chordal` between two vertices of `order` from the
  /// earlier to the later vertex. The caller guarantees that `order` is the
  /// prefix of a reversed perfect elimination ordering.
  static Imap from_order(const UndirectedGraph& chordal, std::vector<int> order, std::uint64_t source_id) {
    Imap m;
    const int n = chordal.num_vars();
    m.dag_.num_vars = n;
    m.source_graph_id_ = source_id;
    m.position_.assign(static_cast<std::size_t>(n), -1);
    for (std::size_t i = 0; i < order.size(); ++i) m.position_[static_cast<std::size_t>(order[i])] = static_cast<int>(i);
    m.parents_.assign(static_cast<std::size_t>(n), {});
    m.children_.assign(static_cast<std::size_t>(n), {});
    m.blanket_.assign(static_cast<std::size_t>(n), {});
    for (int v : order)
      for (int w : chordal.neighbors(v)) {
        const int pw = m.position_[static_cast<std::size_t>(w)];
        if (pw < 0 || pw <= m.position_[static_cast<std::size_t>(v)]) continue;
        m.dag_.arcs.emplace_back(v, w);
        m.children_[static_cast<std::size_t>(v)].push_back(w);
        m.parents_[static_cast<std::size_t>(w)].push_back(v);
      }
    for (auto& p : m.parents_) std::sort(p.begin(), p.end());
    for (auto& c : m.children_) std::sort(c.begin(), c.end());
    for (int v : order) {
      std::set<int> b(m.parents_[static_cast<std::size_t>(v)].begin(), m.parents_[static_cast<std::size_t>(v)].end());
      for (int c : m.children_[static_cast<std::size_t>(v)]) {
        b.insert(c);
        for (int p : m.parents_[static_cast<std::size_t>(c)]) b.insert(p);
      }
      b.erase(v);
      m.blanket_[static_cast<std::size_t>(v)].assign(b.begin(), b.end());
    }
    m.dag_.topo_order = std::move(order);
    return m;
  }

  int num_vars() const { return dag_.num_vars; }
  const Dag& dag() const { return dag_; }
  std::span<const int> topo_order() const { return dag_.topo_order; }
  int num_active() const { return static_cast<int>(dag_.topo_order.size()); }
  bool contains(int v) const { return position_[static_cast<std::size_t>(v)] >= 0; }
  int position(int v) const { return position_[static_cast<std::size_t>(v)]; }
  const std::vector<int>& parents(int v) const { return parents_[static_cast<std::size_t>(v)]; }
  const std::vector<int>& children(int v) const { return children_[static_cast<std::size_t>(v)]; }
  const std::vector<int>& blanket(int v) const { return blanket_[static_cast<std::size_t>(v)]; }
  std::uint64_t source_graph_id() const { return source_graph_id_; }

 private:
  Dag dag_;
  std::vector<int> position_;
  std::vector<std::vector<int>> parents_, children_, blanket_;
  std::uint64_t source_graph_id_ = 0;
};

inline bool is_acyclic(const Dag& d) {
  std::vector<int> indeg(static_cast<std::size_t>(d.num_vars), 0);
  std::vector<std::vector<int>> out(static_cast<std::size_t>(d.num_vars));
  for (auto [a, b] : d.arcs) {
    out[static_cast<std::size_t>(a)].push_back(b);
    ++indeg[static_cast<std::size_t>(b)];
  }
  std::vector<int> stack;
  for (int v = 0; v < d.num_vars; ++v)
    if (indeg[static_cast<std::size_t>(v)] == 0) stack.push_back(v);
  int seen = 0;
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    ++seen;
    for (int w : out[static_cast<std::size_t>(v)])
      if (--indeg[static_cast<std::size_t>(w)] == 0) stack.push_back(w);
  }
  return seen == d.num_vars;
}

inline bool topo_order_consistent(const Dag& d) {
  std::vector<int> pos(static_cast<std::size_t>(d.num_vars), -1);
  for (std::size_t i = 0; i < d.topo_order.size(); ++i) pos[static_cast<std::size_t>(d.topo_order[i])] = static_cast<int>(i);
  for (auto [a, b] : d.arcs)
    if (pos[static_cast<std::size_t>(a)] < 0 || pos[static_cast<std::size_t>(b)] < 0 || pos[static_cast<std::size_t>(a)] >= pos[static_cast<std::size_t>(b)])
      return false;
  return true;
}

inline UndirectedGraph underlying_graph(const Dag& d) { return UndirectedGraph(d.num_vars, d.arcs); }

/// Underlying graph plus edges marrying every pair of co-parents.
inline UndirectedGraph moral_graph(const Dag& d) {
  std::vector<std::vector<int>> parents(static_cast<std::size_t>(d.num_vars));
  for (auto [a, b] : d.arcs) parents[static_cast<std::size_t>(b)].push_back(a);
  std::vector<Edge> e = d.arcs;
  for (const auto& p : parents)
    for (std::size_t i = 0; i < p.size(); ++i)
      for (std::size_t j = i + 1; j < p.size(); ++j) e.emplace_back(p[i], p[j]);
  return UndirectedGraph(d.num_vars, e);
}

inline bool verify_no_immoralities(const Dag& d) { return moral_graph(d) == underlying_graph(d); }

/// Visits the junction tree in a random topological order (optionally giving
/// priority to cliques that contain `focus`), numbering the unvisited vertices
/// of each clique in random order.
inline std::vector<int> pmap_visit_order(const JunctionTree& jt, Rng& rng, std::optional<int> focus = std::nullopt) {
  const auto children = jt.children();
  std::vector<int> frontier(jt.roots.begin(), jt.roots.end());
  std::vector<int> order;
  std::set<int> visited;
  auto holds_focus = [&](int c) {
    const auto& cl = jt.cliques[static_cast<std::size_t>(c)];
    return focus && std::binary_search(cl.begin(), cl.end(), *focus);
  };
  while (!frontier.empty()) {
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < frontier.size(); ++i)
      if (holds_focus(frontier[i])) eligible.push_back(i);
    if (eligible.empty()) {
      eligible.resize(frontier.size());
      std::iota(eligible.begin(), eligible.end(), std::size_t{0});
    }
    const std::size_t pick = eligible[std::uniform_int_distribution<std::size_t>(0, eligible.size() - 1)(rng)];
    const int c = frontier[pick];
    frontier.erase(frontier.begin() + static_cast<std::ptrdiff_t>(pick));
    std::vector<int> fresh;
    for (int v : jt.cliques[static_cast<std::size_t>(c)])
      if (!visited.count(v)) fresh.push_back(v);
    std::shuffle(fresh.begin(), fresh.end(), rng);
    for (int v : fresh) {
      visited.insert(v);
      order.push_back(v);
    }
    for (int d : children[static_cast<std::size_t>(c)]) frontier.push_back(d);
  }
  return order;
}

inline Imap orient_pmap(const UndirectedGraph& g_chordal, const JunctionTree& jt, std::uint64_t seed) {
  Rng rng(seed);
  return Imap::from_order(g_chordal, pmap_visit_order(jt, rng), graph_id(g_chordal));
}

/// Caches the chordal completion and its maximal cliques for one graph and
/// completion seed; draws full or per-variable sub I-maps from it.
class ImapSampler {
 public:
  /// `active` restricts full I-maps to a vertex subset; it must be a union of
  /// connected components of g (e.g. latent variables of an induced subgraph).
  ImapSampler(const UndirectedGraph& g, std::uint64_t seed, std::vector<int> active = {})
      : source_(g), source_id_(graph_id(g)), rng_(seed ^ 0x9E3779B97F4A7C15ULL) {
    active_.assign(static_cast<std::size_t>(g.num_vars()), active.empty() ? 1 : 0);
    for (int v : active) active_[static_cast<std::size_t>(v)] = 1;
    auto ch = min_fill_elimination(g, seed);
    chordal_ = std::move(ch.graph);
    fill_ = std::move(ch.fill_edges);
    cliques_ = max_cardinality_search(chordal_, seed + 1).cliques;
    holders_.assign(static_cast<std::size_t>(g.num_vars()), {});
    for (std::size_t i = 0; i < cliques_.size(); ++i)
      for (int v : cliques_[i]) holders_[static_cast<std::size_t>(v)].push_back(static_cast<int>(i));
  }

  const UndirectedGraph& source() const { return source_; }
  const UndirectedGraph& chordal() const { return chordal_; }
  const std::vector<Edge>& fill_edges() const { return fill_; }
  const std::vector<std::vector<int>>& cliques() const { return cliques_; }

  int max_blanket_size() const {
    int best = 0;
    for (int v = 0; v < chordal_.num_vars(); ++v) best = std::max(best, chordal_.degree(v));
    return best;
  }

  Imap full() { return full(rng_); }
  Imap full(Rng& rng) {
    auto jt = build_junction_tree(cliques_, rng());
    auto order = pmap_visit_order(jt, rng);
    std::erase_if(order, [this](int v) { return !active_[static_cast<std::size_t>(v)]; });
    return Imap::from_order(chordal_, std::move(order), source_id_);
  }

  bool active(int v) const { return active_[static_cast<std::size_t>(v)] != 0; }

  /// I-map over {u} and its chordal neighbourhood, which is an ancestral set of
  /// a full P-map rooted at a clique containing u. The cliques holding u are
  /// visited first, so the first 1 + deg(u) vertices are exactly that set.
  Imap sub(int u) { return sub(u, rng_); }
  Imap sub(int u, Rng& rng) {
    auto jt = build_junction_tree(cliques_, rng());
    const auto& mine = holders_[static_cast<std::size_t>(u)];
    // Re-root u's component at a random clique holding u.
    const int new_root = mine[std::uniform_int_distribution<std::size_t>(0, mine.size() - 1)(rng)];
    reroot(jt, new_root);
    auto order = pmap_visit_order(jt, rng, u);
    const std::size_t keep = static_cast<std::size_t>(1 + chordal_.degree(u));
    order.resize(keep);
    return Imap::from_order(chordal_, std::move(order), source_id_);
  }

 private:
  static void reroot(JunctionTree& jt, int r) {
    int prev = -1, cur = r;
    while (cur >= 0) {
      const int next = jt.parent[static_cast<std::size_t>(cur)];
      jt.parent[static_cast<std::size_t>(cur)] = prev;
      prev = cur;
      cur = next;
    }
    // `prev` is the old component root; replace it in the root list.
    std::replace(jt.roots.begin(), jt.roots.end(), prev, r);
  }

  UndirectedGraph source_, chordal_;
  std::uint64_t source_id_;
  std::vector<Edge> fill_;
  std::vector<std::vector<int>> cliques_;
  std::vector<std::vector<int>> holders_;
  std::vector<char> active_;
  Rng rng_;
};

inline Imap sample_imap(const UndirectedGraph& g, std::uint64_t seed) {
  ImapSampler s(g, seed);
  return s.full();
}

inline Imap sub_imap(const UndirectedGraph& g, int u, std::uint64_t seed) {
  if (u < 0 || u >= g.num_vars()) throw std::out_of_range("sub_imap vertex out of range");
  ImapSampler s(g, seed);
  return s.sub(u);
}

}  // namespace deltaai
