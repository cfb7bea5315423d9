#include "shan/data_io.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "shan/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace shan {

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write file: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write: " + path);
}

json parse_json_file(const std::string& path) {
  const std::string bytes = read_file(path);
  try {
    return json::parse(bytes);
  } catch (const json::exception& e) {
    throw SchemaError(path + ": " + e.what());
  }
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

void append_u32le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u64le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_f64le(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  append_u64le(out, bits);
}

std::uint32_t read_u32le(const std::string& bytes, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
  return v;
}

std::uint64_t read_u64le(const std::string& bytes, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
  return v;
}

double read_f64le(const std::string& bytes, std::size_t at) {
  const std::uint64_t bits = read_u64le(bytes, at);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

// Strict integer parse; the whole token must be consumed.
long parse_long(const std::string& tok, const std::string& file, std::size_t line) {
  std::size_t pos = 0;
  long v = 0;
  try {
    v = std::stol(tok, &pos);
  } catch (const std::exception&) {
    throw SchemaError(file + ":" + std::to_string(line) + ": not an integer: '" + tok + "'");
  }
  if (pos != tok.size()) {
    throw SchemaError(file + ":" + std::to_string(line) + ": not an integer: '" + tok + "'");
  }
  return v;
}

double parse_double(const std::string& tok, const std::string& file, std::size_t line) {
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(tok, &pos);
  } catch (const std::exception&) {
    throw SchemaError(file + ":" + std::to_string(line) + ": not a number: '" + tok + "'");
  }
  if (pos != tok.size()) {
    throw SchemaError(file + ":" + std::to_string(line) + ": not a number: '" + tok + "'");
  }
  if (!std::isfinite(v)) {
    throw SchemaError(file + ":" + std::to_string(line) + ": non-finite value: '" + tok + "'");
  }
  return v;
}

std::vector<std::string> split_lines(const std::string& bytes) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < bytes.size()) {
    std::size_t end = bytes.find('\n', start);
    if (end == std::string::npos) end = bytes.size();
    lines.push_back(bytes.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> toks;
  std::size_t start = 0;
  while (true) {
    std::size_t end = s.find(sep, start);
    if (end == std::string::npos) {
      toks.push_back(s.substr(start));
      break;
    }
    toks.push_back(s.substr(start, end - start));
    start = end + 1;
  }
  return toks;
}

std::string edge_file_name(const Relation& r) {
  return r.src + "__" + r.name + "__" + r.dst + ".tsv";
}

constexpr char kFeatureMagic[4] = {'S', 'H', 'F', 'B'};
constexpr std::uint32_t kFeatureVersion = 1;

Tensor parse_features_csv(const std::string& path, const std::string& bytes,
                          std::size_t expected_rows) {
  const std::vector<std::string> lines = split_lines(bytes);
  if (lines.size() != expected_rows) {
    throw DataError(path + ": expected " + std::to_string(expected_rows) +
                    " rows, found " + std::to_string(lines.size()));
  }
  std::vector<double> values;
  std::size_t cols = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::vector<std::string> toks = split_on(lines[i], ',');
    if (i == 0) {
      cols = toks.size();
      if (cols == 0 || (cols == 1 && toks[0].empty())) {
        throw SchemaError(path + ":1: empty feature row");
      }
    } else if (toks.size() != cols) {
      throw SchemaError(path + ":" + std::to_string(i + 1) + ": expected " +
                        std::to_string(cols) + " columns, found " +
                        std::to_string(toks.size()));
    }
    for (const std::string& tok : toks) values.push_back(parse_double(tok, path, i + 1));
  }
  return Tensor({expected_rows, cols}, std::move(values));
}

// The binary sidecar wins only when its recorded checksum matches the CSV
// bytes actually on disk; otherwise it is treated as stale.
Tensor load_features(const std::string& csv_path, const std::string& bin_path,
                     std::size_t expected_rows) {
  const std::string csv_bytes = read_file(csv_path);
  if (fs::exists(bin_path)) {
    const std::string bin = read_file(bin_path);
    if (bin.size() >= 32 && std::memcmp(bin.data(), kFeatureMagic, 4) == 0 &&
        read_u32le(bin, 4) == kFeatureVersion) {
      const std::uint64_t rows = read_u64le(bin, 8);
      const std::uint64_t cols = read_u64le(bin, 16);
      const std::uint64_t checksum = read_u64le(bin, 24);
      if (checksum == fnv1a64(csv_bytes)) {
        if (rows != expected_rows) {
          throw DataError(bin_path + ": expected " + std::to_string(expected_rows) +
                          " rows, found " + std::to_string(rows));
        }
        const std::size_t need = 32 + rows * cols * 8;
        if (bin.size() != need) {
          throw SchemaError(bin_path + ": truncated payload");
        }
        std::vector<double> values(rows * cols);
        for (std::size_t i = 0; i < values.size(); ++i) {
          values[i] = read_f64le(bin, 32 + 8 * i);
        }
        return Tensor({static_cast<std::size_t>(rows), static_cast<std::size_t>(cols)},
                      std::move(values));
      }
    }
  }
  return parse_features_csv(csv_path, csv_bytes, expected_rows);
}

}  // namespace

void DatasetBundle::validate_splits() const {
  const auto n = static_cast<long>(target_count());
  std::vector<char> seen(target_count(), 0);
  auto check = [&](const std::vector<int>& ids, const char* which) {
    for (int id : ids) {
      if (id < 0 || id >= n) {
        throw DataError(std::string("splits: ") + which + " id " + std::to_string(id) +
                        " out of range");
      }
      if (labels[id] < 0) {
        throw DataError(std::string("splits: ") + which + " id " + std::to_string(id) +
                        " is unlabeled");
      }
      if (seen[id]) {
        throw DataError("splits: id " + std::to_string(id) + " appears in two splits");
      }
      seen[id] = 1;
    }
  };
  check(splits.train, "train");
  check(splits.val, "val");
  check(splits.test, "test");
}

DatasetBundle load_dataset(const std::string& dir, bool allow_toy) {
  const std::string meta_path = dir + "/meta.json";
  const json meta = parse_json_file(meta_path);
  DatasetBundle bundle;
  std::vector<std::string> node_types;
  std::vector<Relation> relations;
  try {
    bundle.target_type = meta.at("target_type").get<std::string>();
    bundle.num_classes = meta.at("num_classes").get<int>();
    node_types = meta.at("node_types").get<std::vector<std::string>>();
    for (const json& r : meta.at("relations")) {
      relations.push_back({r.at("src").get<std::string>(),
                           r.at("name").get<std::string>(),
                           r.at("dst").get<std::string>()});
    }
    if (!meta.contains("metapaths")) {
      throw SchemaError(meta_path + ": key 'metapaths' not found");
    }
  } catch (const json::exception& e) {
    throw SchemaError(meta_path + ": " + e.what());
  }
  if (bundle.num_classes < 1) {
    throw SchemaError(meta_path + ": num_classes must be >= 1");
  }
  if (meta.at("metapaths").empty()) {
    throw SchemaError(meta_path + ": metapaths must be non-empty");
  }

  const json nodes = parse_json_file(dir + "/nodes.json");
  std::map<std::string, std::size_t> counts;
  try {
    for (const auto& [type, cnt] : nodes.at("counts").items()) {
      const long long c = cnt.get<long long>();
      if (c < 0) {
        throw SchemaError(dir + "/nodes.json: negative count for type '" + type + "'");
      }
      counts[type] = static_cast<std::size_t>(c);
    }
  } catch (const json::exception& e) {
    throw SchemaError(dir + "/nodes.json: " + e.what());
  }

  std::vector<std::vector<std::pair<int, int>>> edge_lists;
  for (const Relation& r : relations) {
    const std::string path = dir + "/edges/" + edge_file_name(r);
    const std::string bytes = read_file(path);
    std::vector<std::pair<int, int>> edges;
    const std::vector<std::string> lines = split_lines(bytes);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      const std::vector<std::string> toks = split_on(lines[i], '\t');
      if (toks.size() != 2) {
        throw SchemaError(path + ":" + std::to_string(i + 1) +
                          ": expected 'src\\tdst'");
      }
      edges.emplace_back(static_cast<int>(parse_long(toks[0], path, i + 1)),
                         static_cast<int>(parse_long(toks[1], path, i + 1)));
    }
    edge_lists.push_back(std::move(edges));
  }

  bundle.graph = build_graph(node_types, relations, counts, edge_lists, allow_toy);
  if (!bundle.graph.has_type(bundle.target_type)) {
    throw SchemaError(meta_path + ": target_type '" + bundle.target_type +
                      "' is not a declared node type");
  }
  const std::size_t n = bundle.graph.node_count(bundle.target_type);

  bundle.features = load_features(dir + "/features/" + bundle.target_type + ".csv",
                                  dir + "/features/" + bundle.target_type + ".bin", n);

  const std::string labels_path = dir + "/labels.tsv";
  const std::string labels_bytes = read_file(labels_path);
  bundle.labels.assign(n, -1);
  {
    std::vector<char> seen(n, 0);
    const std::vector<std::string> lines = split_lines(labels_bytes);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      const std::vector<std::string> toks = split_on(lines[i], '\t');
      if (toks.size() != 2) {
        throw SchemaError(labels_path + ":" + std::to_string(i + 1) +
                          ": expected 'node_id\\tclass_id'");
      }
      const long id = parse_long(toks[0], labels_path, i + 1);
      const long cls = parse_long(toks[1], labels_path, i + 1);
      if (id < 0 || id >= static_cast<long>(n)) {
        throw SchemaError(labels_path + ":" + std::to_string(i + 1) + ": node id " +
                          std::to_string(id) + " out of range (n=" + std::to_string(n) +
                          ")");
      }
      if (cls < -1 || cls >= bundle.num_classes) {
        throw SchemaError(labels_path + ":" + std::to_string(i + 1) + ": class id " +
                          std::to_string(cls) + " out of range");
      }
      if (seen[id]) {
        throw SchemaError(labels_path + ":" + std::to_string(i + 1) +
                          ": duplicate node id " + std::to_string(id));
      }
      seen[id] = 1;
      bundle.labels[id] = static_cast<int>(cls);
    }
  }

  // Meta-paths: relation names resolved against the schema, then composed.
  for (const json& mp : meta.at("metapaths")) {
    MetaPath path;
    try {
      path.name = mp.at("name").get<std::string>();
      for (const json& rel : mp.at("relations")) {
        const std::string rel_name = rel.get<std::string>();
        int idx = -1;
        try {
          idx = bundle.graph.relation_index(rel_name);
        } catch (const SchemaError&) {
          throw MetaPathError("meta-path '" + path.name + "' uses unknown relation '" +
                              rel_name + "'");
        }
        path.relations.push_back(idx);
      }
    } catch (const json::exception& e) {
      throw SchemaError(meta_path + ": " + e.what());
    }
    path.target_type = bundle.target_type;
    resolve_metapath(bundle.graph, path);  // throws on endpoint mismatch
    bundle.metapaths.push_back(path);
    bundle.adjacencies.push_back(compose_metapath_adjacency(bundle.graph, path));
  }

  const std::string splits_path = dir + "/splits.json";
  if (fs::exists(splits_path)) {
    const json sj = parse_json_file(splits_path);
    try {
      bundle.splits.train = sj.at("train").get<std::vector<int>>();
      bundle.splits.val = sj.at("val").get<std::vector<int>>();
      bundle.splits.test = sj.at("test").get<std::vector<int>>();
    } catch (const json::exception& e) {
      throw SchemaError(splits_path + ": " + e.what());
    }
    bundle.has_splits = true;
    bundle.validate_splits();
  }
  return bundle;
}

void write_dataset(const DatasetBundle& bundle, const std::string& dir) {
  fs::create_directories(dir + "/edges");
  fs::create_directories(dir + "/features");

  const HeteroGraph& g = bundle.graph;
  json meta;
  meta["target_type"] = bundle.target_type;
  meta["num_classes"] = bundle.num_classes;
  meta["node_types"] = g.node_types();
  json rels = json::array();
  for (const Relation& r : g.relations()) {
    rels.push_back({{"src", r.src}, {"name", r.name}, {"dst", r.dst}});
  }
  meta["relations"] = rels;
  json mps = json::array();
  for (const MetaPath& mp : bundle.metapaths) {
    json names = json::array();
    for (int rid : mp.relations) names.push_back(g.relations()[rid].name);
    mps.push_back({{"name", mp.name}, {"relations", names}});
  }
  meta["metapaths"] = mps;
  write_file(dir + "/meta.json", meta.dump(2) + "\n");

  json nodes;
  nodes["counts"] = json::object();
  for (const std::string& t : g.node_types()) {
    nodes["counts"][t] = g.node_count(t);
  }
  write_file(dir + "/nodes.json", nodes.dump(2) + "\n");

  for (std::size_t rid = 0; rid < g.relations().size(); ++rid) {
    std::string bytes;
    for (const auto& [s, d] : g.edges(static_cast<int>(rid))) {
      bytes += std::to_string(s) + "\t" + std::to_string(d) + "\n";
    }
    write_file(dir + "/edges/" + edge_file_name(g.relations()[rid]), bytes);
  }

  std::string csv;
  const Tensor& f = bundle.features;
  for (std::size_t i = 0; i < f.rows(); ++i) {
    for (std::size_t c = 0; c < f.cols(); ++c) {
      if (c) csv += ',';
      csv += format_double(f.at(i, c));
    }
    csv += '\n';
  }
  const std::string csv_path = dir + "/features/" + bundle.target_type + ".csv";
  write_file(csv_path, csv);
  std::string bin(kFeatureMagic, 4);
  append_u32le(bin, kFeatureVersion);
  append_u64le(bin, f.rows());
  append_u64le(bin, f.cols());
  append_u64le(bin, fnv1a64(csv));
  for (std::size_t i = 0; i < f.size(); ++i) append_f64le(bin, f[i]);
  write_file(dir + "/features/" + bundle.target_type + ".bin", bin);

  std::string labels;
  for (std::size_t i = 0; i < bundle.labels.size(); ++i) {
    labels += std::to_string(i) + "\t" + std::to_string(bundle.labels[i]) + "\n";
  }
  write_file(dir + "/labels.tsv", labels);

  if (bundle.has_splits) {
    json sj;
    sj["train"] = bundle.splits.train;
    sj["val"] = bundle.splits.val;
    sj["test"] = bundle.splits.test;
    write_file(dir + "/splits.json", sj.dump(2) + "\n");
  }
}

Splits make_splits(const std::vector<int>& labels,
                   const std::array<double, 3>& ratios, std::uint64_t seed) {
  double total = 0.0;
  for (double r : ratios) {
    if (!(r > 0.0) || !std::isfinite(r)) {
      throw ConfigError("split ratios must be positive");
    }
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("split ratios must sum to 1");
  }

  std::map<int, std::vector<int>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= 0) by_class[labels[i]].push_back(static_cast<int>(i));
  }
  if (by_class.empty()) throw DataError("no labeled nodes to split");

  std::mt19937_64 rng(seed);
  Splits out;
  for (auto& [cls, ids] : by_class) {
    if (ids.size() < 3) {
      throw DataError("class " + std::to_string(cls) + " has only " +
                      std::to_string(ids.size()) +
                      " labeled nodes; need at least 3 for stratified splits");
    }
    std::shuffle(ids.begin(), ids.end(), rng);

    const auto m = static_cast<double>(ids.size());
    std::array<std::size_t, 3> sizes{};
    std::array<double, 3> fracs{};
    std::size_t assigned = 0;
    for (int k = 0; k < 3; ++k) {
      const double quota = ratios[k] * m;
      sizes[k] = static_cast<std::size_t>(std::floor(quota));
      fracs[k] = quota - std::floor(quota);
      assigned += sizes[k];
    }
    // Largest-remainder rounding; ties go to the earlier bucket.
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return fracs[a] > fracs[b]; });
    for (std::size_t left = ids.size() - assigned, k = 0; left > 0; --left, ++k) {
      ++sizes[order[k]];
    }

    std::size_t at = 0;
    for (std::size_t k = 0; k < sizes[0]; ++k) out.train.push_back(ids[at++]);
    for (std::size_t k = 0; k < sizes[1]; ++k) out.val.push_back(ids[at++]);
    for (std::size_t k = 0; k < sizes[2]; ++k) out.test.push_back(ids[at++]);
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

void SyntheticSpec::validate() const {
  if (target_count < 1) throw ConfigError("target_count must be positive");
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (num_metapaths < 1) throw ConfigError("num_metapaths must be positive");
  if (hubs_per_class < 1) throw ConfigError("hubs_per_class must be positive");
  for (double p : {p_intra, p_inter}) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw ConfigError("connection probabilities must lie in [0, 1]");
    }
  }
  if (feature_dim < num_classes) {
    throw ConfigError("feature_dim must be at least num_classes");
  }
  if (!std::isfinite(snr) || snr < 0.0) throw ConfigError("snr must be non-negative");
}

DatasetBundle generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);

  DatasetBundle bundle;
  bundle.target_type = "item";
  bundle.num_classes = spec.num_classes;
  bundle.labels.resize(spec.target_count);
  for (int i = 0; i < spec.target_count; ++i) bundle.labels[i] = i % spec.num_classes;

  std::vector<std::string> node_types = {"item"};
  std::vector<Relation> relations;
  std::map<std::string, std::size_t> counts;
  counts["item"] = static_cast<std::size_t>(spec.target_count);
  const int hubs = spec.num_classes * spec.hubs_per_class;
  for (int p = 0; p < spec.num_metapaths; ++p) {
    const std::string group = "group" + std::to_string(p);
    node_types.push_back(group);
    relations.push_back({"item", "in" + std::to_string(p), group});
    counts[group] = static_cast<std::size_t>(hubs);
  }

  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<std::vector<std::pair<int, int>>> edge_lists(relations.size());
  for (int p = 0; p < spec.num_metapaths; ++p) {
    for (int i = 0; i < spec.target_count; ++i) {
      for (int h = 0; h < hubs; ++h) {
        const int community = h / spec.hubs_per_class;
        const double prob = community == bundle.labels[i] ? spec.p_intra : spec.p_inter;
        if (uni(rng) < prob) edge_lists[p].emplace_back(i, h);
      }
    }
  }
  bundle.graph = build_graph(node_types, relations, counts, edge_lists);

  std::normal_distribution<double> noise(0.0, 1.0);
  bundle.features = Tensor({static_cast<std::size_t>(spec.target_count),
                            static_cast<std::size_t>(spec.feature_dim)});
  for (int i = 0; i < spec.target_count; ++i) {
    for (int d = 0; d < spec.feature_dim; ++d) {
      bundle.features.at(i, d) = noise(rng);
    }
    bundle.features.at(i, bundle.labels[i]) += spec.snr;
  }

  for (int p = 0; p < spec.num_metapaths; ++p) {
    MetaPath mp;
    mp.name = "via_group" + std::to_string(p);
    mp.relations = {p, p};  // out to the hub and back
    mp.target_type = "item";
    bundle.metapaths.push_back(mp);
    bundle.adjacencies.push_back(compose_metapath_adjacency(bundle.graph, mp));
  }

  bundle.splits = make_splits(bundle.labels, {0.2, 0.1, 0.7}, spec.seed);
  bundle.has_splits = true;
  return bundle;
}

double same_class_neighbor_fraction(const DatasetBundle& bundle) {
  std::size_t total = 0, match = 0;
  for (const MetaPathAdjacency& adj : bundle.adjacencies) {
    for (std::size_t i = 0; i < adj.node_count(); ++i) {
      if (bundle.labels[i] < 0) continue;
      for (int j : adj.neighbors(i)) {
        if (static_cast<std::size_t>(j) == i) continue;
        if (bundle.labels[j] < 0) continue;
        ++total;
        if (bundle.labels[j] == bundle.labels[i]) ++match;
      }
    }
  }
  if (total == 0) return 0.0;
  return static_cast<double>(match) / static_cast<double>(total);
}

}  // namespace shan
