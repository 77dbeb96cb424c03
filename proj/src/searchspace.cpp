#include "das/searchspace.hpp"

#include "das/errors.hpp"
#include "das/hash.hpp"

#include <algorithm>
#include <random>

namespace das {

std::string_view op_name(OpLabel op) noexcept {
  switch (op) {
    case OpLabel::Conv1x1: return "CONV1x1";
    case OpLabel::Conv3x3: return "CONV3x3";
    case OpLabel::MaxPool3x3: return "MAXPOOL3x3";
  }
  return "?";
}

OpLabel parse_op(std::string_view name) {
  for (OpLabel op : kAllOps)
    if (op_name(op) == name) return op;
  throw FormatError("unknown op label '" + std::string(name) + "'");
}

ArchSpec::ArchSpec(int num_nodes, std::vector<Edge> edges, std::vector<OpLabel> ops) : ops_(std::move(ops)) {
  if (num_nodes < kMinNodes) throw FormatError("a cell needs at least 2 nodes");
  adjacency_ = Adjacency::Zero(num_nodes, num_nodes);
  for (auto [i, j] : edges) {
    if (i < 0 || j < 0 || i >= num_nodes || j >= num_nodes)
      throw FormatError("edge [" + std::to_string(i) + "," + std::to_string(j) + "] out of range");
    adjacency_(i, j) = 1;
  }
  finish();
}

ArchSpec::ArchSpec(const Adjacency& adjacency, std::vector<OpLabel> ops) : adjacency_(adjacency), ops_(std::move(ops)) {
  if (adjacency_.rows() != adjacency_.cols() || adjacency_.rows() < kMinNodes)
    throw FormatError("adjacency must be square with at least 2 nodes");
  adjacency_ = adjacency_.unaryExpr([](std::uint8_t v) -> std::uint8_t { return v ? 1 : 0; });
  finish();
}

void ArchSpec::finish() {
  if (ops_.size() != static_cast<std::size_t>(num_nodes() - 2))
    throw FormatError("expected " + std::to_string(num_nodes() - 2) + " interior ops, got " +
                      std::to_string(ops_.size()));
  hash_ = fnv1a64(canonical_string());
}

std::vector<Edge> ArchSpec::edges() const {
  std::vector<Edge> out;
  for (int i = 0; i < num_nodes(); ++i)
    for (int j = 0; j < num_nodes(); ++j)
      if (adjacency_(i, j)) out.emplace_back(i, j);
  return out;
}

std::size_t ArchSpec::edge_count() const noexcept { return static_cast<std::size_t>(adjacency_.cast<int>().sum()); }

std::string ArchSpec::hash_hex() const { return to_hex(hash_); }

std::string ArchSpec::canonical_string() const {
  nlohmann::json j;
  j["nodes"] = num_nodes();
  j["adjacency"] = nlohmann::json::array();
  for (auto [a, b] : edges()) j["adjacency"].push_back({a, b});
  j["ops"] = nlohmann::json::array();
  for (OpLabel op : ops_) j["ops"].push_back(op_name(op));
  return j.dump();
}

nlohmann::json ArchSpec::to_json() const {
  auto j = nlohmann::json::parse(canonical_string());
  j["hash"] = hash_hex();
  return j;
}

ArchSpec ArchSpec::from_json(const nlohmann::json& j) {
  try {
    std::vector<Edge> edges;
    for (const auto& e : j.at("adjacency")) {
      if (!e.is_array() || e.size() != 2) throw FormatError("edge must be a [from, to] pair");
      edges.emplace_back(e[0].get<int>(), e[1].get<int>());
    }
    std::vector<OpLabel> ops;
    for (const auto& o : j.at("ops")) ops.push_back(parse_op(o.get<std::string>()));
    ArchSpec spec(j.at("nodes").get<int>(), std::move(edges), std::move(ops));
    if (j.contains("hash") && j["hash"].get<std::string>() != spec.hash_hex())
      throw FormatError("spec hash " + j["hash"].get<std::string>() + " does not match content hash " +
                        spec.hash_hex());
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed spec json: ") + e.what());
  }
}

std::vector<std::string> validate(const ArchSpec& spec) {
  std::vector<std::string> out;
  const int n = spec.num_nodes();
  const auto& adj = spec.adjacency();
  if (n < kMinNodes || n > kMaxNodes)
    out.push_back("node count " + std::to_string(n) + " outside [" + std::to_string(kMinNodes) + ", " +
                  std::to_string(kMaxNodes) + "]");
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j)
      if (adj(i, j)) out.push_back("cycle: edge " + std::to_string(i) + "->" + std::to_string(j) + " is not forward");
  if (spec.edge_count() > kMaxEdges)
    out.push_back("edge budget: " + std::to_string(spec.edge_count()) + " edges exceed " + std::to_string(kMaxEdges));

  // Reachability over forward edges only.
  std::vector<char> from_input(n, 0), to_output(n, 0);
  from_input[0] = 1;
  for (int j = 1; j < n; ++j)
    for (int i = 0; i < j; ++i)
      if (adj(i, j) && from_input[i]) from_input[j] = 1;
  to_output[n - 1] = 1;
  for (int i = n - 2; i >= 0; --i)
    for (int j = i + 1; j < n; ++j)
      if (adj(i, j) && to_output[j]) to_output[i] = 1;
  if (!from_input[n - 1]) out.push_back("output unreachable from input");
  for (int k = 1; k < n - 1; ++k)
    if (!from_input[k] || !to_output[k]) out.push_back("dangling node " + std::to_string(k));
  return out;
}

ArchSpec sample_random(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> nodes(kMinNodes, kMaxNodes);
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(kAllOps.size()) - 1);
  for (int attempt = 0; attempt < 100000; ++attempt) {
    const int n = nodes(rng);
    Adjacency adj = Adjacency::Zero(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) adj(i, j) = static_cast<std::uint8_t>(coin(rng));
    std::vector<OpLabel> ops(static_cast<std::size_t>(n - 2));
    for (OpLabel& op : ops) op = kAllOps[pick(rng)];
    ArchSpec spec(adj, std::move(ops));
    if (validate(spec).empty()) return spec;
  }
  throw InternalError("sample_random: rejection sampling exceeded 100000 attempts");
}

void Skeleton::check() const {
  if (stem_channels <= 0 || num_stacks <= 0 || cells_per_stack <= 0 || classes <= 0 || input_shape[0] <= 0 ||
      input_shape[1] <= 0 || input_shape[2] <= 0)
    throw ConfigError("skeleton parameters must all be positive");
  const int factor = 1 << (num_stacks - 1);
  if (input_shape[1] % factor != 0 || input_shape[2] % factor != 0)
    throw ConfigError("input extent must be divisible by 2^(num_stacks - 1)");
}

nlohmann::json Skeleton::to_json() const {
  return {{"stem_channels", stem_channels}, {"num_stacks", num_stacks}, {"cells_per_stack", cells_per_stack},
          {"classes", classes},             {"input_shape", input_shape}};
}

Skeleton Skeleton::from_json(const nlohmann::json& j) {
  try {
    Skeleton s;
    s.stem_channels = j.at("stem_channels").get<int>();
    s.num_stacks = j.at("num_stacks").get<int>();
    s.cells_per_stack = j.at("cells_per_stack").get<int>();
    s.classes = j.at("classes").get<int>();
    s.input_shape = j.at("input_shape").get<std::array<int, 3>>();
    s.check();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed skeleton json: ") + e.what());
  }
}

namespace {

struct CellOutput {
  int id;
  int channels;
};

CellOutput build_cell(Network& net, const ArchSpec& spec, int cell_input, int cin, int cout) {
  const int n = spec.num_nodes();
  const auto& adj = spec.adjacency();
  std::vector<int> out_id(n, -1);
  auto project = [&](int channels) { return net.add(ReLU{}, {net.add(make_conv(1, cin, channels), {cell_input})}); };
  auto mean = [&](const std::vector<int>& ins) { return net.add(Add{1.0 / static_cast<double>(ins.size())}, ins); };

  for (int k = 1; k < n - 1; ++k) {
    std::vector<int> ins;
    for (int p = 0; p < k; ++p) {
      if (!adj(p, k)) continue;
      ins.push_back(p == 0 ? project(cout) : out_id[p]);
    }
    if (ins.empty()) throw ConfigError("node " + std::to_string(k) + " has no inputs");
    const int joined = ins.size() == 1 ? ins[0] : mean(ins);
    switch (spec.op(k)) {
      case OpLabel::Conv1x1:
        out_id[k] = net.add(ReLU{}, {net.add(make_conv(1, cout, cout), {joined})});
        break;
      case OpLabel::Conv3x3:
        out_id[k] = net.add(ReLU{}, {net.add(make_conv(3, cout, cout, 1, 1), {joined})});
        break;
      case OpLabel::MaxPool3x3:
        out_id[k] = net.add(MaxPool2D{3, 1, 1}, {joined});
        break;
    }
  }

  std::vector<int> leaves;
  for (int k = 1; k < n - 1; ++k)
    if (adj(k, n - 1)) leaves.push_back(out_id[k]);
  if (leaves.empty()) return {project(cout), cout};
  const int channels = cout * static_cast<int>(leaves.size());
  int out = leaves.size() == 1 ? leaves[0] : net.add(Concat{}, leaves);
  if (adj(0, n - 1)) out = mean({out, project(channels)});
  return {out, channels};
}

}  // namespace

Network compile(const ArchSpec& spec, const Skeleton& skel) {
  if (auto v = validate(spec); !v.empty()) throw ConfigError("cannot compile invalid spec: " + v.front());
  skel.check();
  Network net(skel.input());
  int x = net.add(ReLU{}, {net.add(make_conv(3, skel.input_shape[0], skel.stem_channels, 1, 1), {Network::kInputId})});
  int channels = skel.stem_channels;
  for (int s = 0; s < skel.num_stacks; ++s) {
    const int width = skel.stem_channels << s;
    if (s > 0) x = net.add(MaxPool2D{2, 2, 0}, {x});
    for (int c = 0; c < skel.cells_per_stack; ++c) {
      try {
        const CellOutput out = build_cell(net, spec, x, channels, width);
        (void)net.infer_shapes();
        x = out.id;
        channels = out.channels;
      } catch (const ConfigError& e) {
        throw ConfigError("stack " + std::to_string(s) + " cell " + std::to_string(c) + ": " + e.what());
      }
    }
  }
  x = net.add(GlobalAvgPool{}, {x});
  net.add(make_linear(channels, skel.classes), {x});
  return net;
}

}  // namespace das
