#include "s2s/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace s2s {

std::vector<int> Dataset::identities() const {
  std::set<int> ids;
  for (const auto& r : records) ids.insert(r.identity);
  return {ids.begin(), ids.end()};
}

std::vector<int> Dataset::indices_of(int identity, View view) const {
  std::vector<int> out;
  for (size_t i = 0; i < records.size(); ++i)
    if (records[i].identity == identity && records[i].view == view)
      out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> Dataset::sample_shape() const {
  if (records.empty()) throw DataError("dataset: empty");
  return records[0].sample.shape();
}

void Dataset::validate() const {
  if (records.empty()) throw DataError("dataset: empty");
  const auto shape = records[0].sample.shape();
  for (const auto& r : records)
    if (r.sample.shape() != shape)
      throw DataError("dataset: sample dims " + shape_str(r.sample.shape()) +
                      " for identity " + std::to_string(r.identity) +
                      " differ from " + shape_str(shape));
  for (int id : identities()) {
    for (View v : {View::A, View::B}) {
      if (indices_of(id, v).empty())
        throw DataError("dataset: identity " + std::to_string(id) + " has no samples in view " +
                        view_name(v));
    }
  }
}

void SyntheticSpec::validate() const {
  if (n_identities < 2) throw UsageError("synthetic: need at least 2 identities");
  if (per_view < 1) throw UsageError("synthetic: per_view must be >= 1");
  if (dims.empty()) throw UsageError("synthetic: empty sample dims");
  if (!(separation > 0.0)) throw UsageError("synthetic: separation must be > 0");
  if (sigma < 0.0) throw UsageError("synthetic: sigma must be >= 0");
  if (cross_view_shift < 0.0) throw UsageError("synthetic: cross_view_shift must be >= 0");
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const long long dim = Tensor::count(spec.dims);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> unit(0.0, 1.0);

  // Centers are drawn at a scale tied to the separation so the constraint is
  // satisfiable in modest dimension; rejection enforces the hard minimum.
  const double center_scale =
      std::max(spec.separation / std::sqrt(2.0 * static_cast<double>(dim)) * 1.5,
               spec.separation * 0.05);
  std::vector<std::vector<double>> centers;
  const int max_tries = 1000;
  for (int i = 0; i < spec.n_identities; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < max_tries && !placed; ++attempt) {
      std::vector<double> c(static_cast<size_t>(dim));
      for (double& v : c) v = center_scale * unit(rng);
      placed = true;
      for (const auto& other : centers) {
        if (std::sqrt(squared_distance(c, other)) < spec.separation) {
          placed = false;
          break;
        }
      }
      if (placed) centers.push_back(std::move(c));
    }
    if (!placed)
      throw DataError("synthetic: could not place " + std::to_string(spec.n_identities) +
                      " centers with separation " + std::to_string(spec.separation) +
                      " in dimension " + std::to_string(dim));
  }

  // fixed unit direction for the systematic view-B offset
  std::vector<double> shift(static_cast<size_t>(dim));
  double norm = 0.0;
  for (double& v : shift) {
    v = unit(rng);
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (double& v : shift) v = v / norm * spec.cross_view_shift;

  Dataset data;
  for (int i = 0; i < spec.n_identities; ++i) {
    for (View v : {View::A, View::B}) {
      for (int j = 0; j < spec.per_view; ++j) {
        Tensor t(spec.dims);
        for (long long k = 0; k < dim; ++k) {
          double x = centers[static_cast<size_t>(i)][static_cast<size_t>(k)] +
                     spec.sigma * unit(rng);
          if (v == View::B) x += shift[static_cast<size_t>(k)];
          t[k] = x;
        }
        data.records.push_back({i, v, std::move(t)});
      }
    }
  }
  return data;
}

namespace {

constexpr char kTensorMagic[4] = {'S', '2', 'S', 'D'};

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& is, const std::string& what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw DataError("tensor file: truncated while reading " + what);
  return v;
}

View parse_view(const std::string& s, const std::string& where) {
  if (s == "A" || s == "a") return View::A;
  if (s == "B" || s == "b") return View::B;
  throw DataError(where + ": view must be A or B, got '" + s + "'");
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.erase(f.begin());
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.pop_back();
  }
  return out;
}

int parse_int(const std::string& s, const std::string& where) {
  try {
    size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": expected integer, got '" + s + "'");
  }
}

double parse_double(const std::string& s, const std::string& where) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": expected number, got '" + s + "'");
  }
}

Dataset load_inline_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("load_dataset: cannot open " + path.string());
  Dataset data;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string where = path.filename().string() + ":" + std::to_string(lineno);
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_fields(line);
    if (fields.size() < 3)
      throw DataError(where + ": inline record needs identity,view,v0,...");
    DatasetRecord rec;
    rec.identity = parse_int(fields[0], where);
    rec.view = parse_view(fields[1], where);
    std::vector<double> vals;
    for (size_t i = 2; i < fields.size(); ++i) vals.push_back(parse_double(fields[i], where));
    rec.sample = Tensor::vec(std::move(vals));
    data.records.push_back(std::move(rec));
  }
  data.validate();
  return data;
}

}  // namespace

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("load_tensor: cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kTensorMagic, 4) != 0)
    throw DataError("load_tensor: bad magic in " + path.string());
  const auto rank = read_pod<std::uint32_t>(is, "rank");
  if (rank == 0 || rank > 8) throw DataError("load_tensor: implausible rank in " + path.string());
  std::vector<int> shape;
  for (std::uint32_t i = 0; i < rank; ++i)
    shape.push_back(static_cast<int>(read_pod<std::uint32_t>(is, "extent")));
  Tensor t(shape);
  is.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!is) throw DataError("load_tensor: truncated payload in " + path.string());
  return t;
}

void save_tensor(const Tensor& t, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("save_tensor: cannot open " + path.string());
  os.write(kTensorMagic, 4);
  write_pod(os, static_cast<std::uint32_t>(t.rank()));
  for (int e : t.shape()) write_pod(os, static_cast<std::uint32_t>(e));
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!os) throw DataError("save_tensor: write failed for " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  if (path.extension() == ".csv") return load_inline_csv(path);
  std::ifstream is(path);
  if (!is) throw DataError("load_dataset: cannot open " + path.string());
  const auto base = path.parent_path();
  Dataset data;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string where = path.filename().string() + ":" + std::to_string(lineno);
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_fields(line);
    if (fields.size() != 3)
      throw DataError(where + ": manifest line needs identity,view,relative-path");
    DatasetRecord rec;
    rec.identity = parse_int(fields[0], where);
    rec.view = parse_view(fields[1], where);
    const auto tensor_path = base / fields[2];
    if (!std::filesystem::exists(tensor_path))
      throw DataError(where + ": tensor file does not exist: " + tensor_path.string());
    rec.sample = load_tensor(tensor_path);
    data.records.push_back(std::move(rec));
  }
  data.validate();
  return data;
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir,
                  const std::string& manifest_name) {
  data.validate();
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / manifest_name);
  if (!manifest) throw DataError("save_dataset: cannot open manifest in " + dir.string());
  std::map<std::pair<int, int>, int> counters;
  for (const auto& rec : data.records) {
    const int c = counters[{rec.identity, static_cast<int>(rec.view)}]++;
    const std::string name = "id" + std::to_string(rec.identity) + "_" + view_name(rec.view) +
                             "_" + std::to_string(c) + ".s2sd";
    save_tensor(rec.sample, dir / name);
    manifest << rec.identity << "," << view_name(rec.view) << "," << name << "\n";
  }
  if (!manifest) throw DataError("save_dataset: manifest write failed in " + dir.string());
}

SplitResult split_protocol(const Dataset& data, double train_fraction, std::uint64_t seed) {
  data.validate();
  if (train_fraction < 0.0 || train_fraction > 1.0)
    throw UsageError("split_protocol: train_fraction must lie in [0, 1]");
  std::vector<int> ids = data.identities();
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  const int n_train = static_cast<int>(std::lround(train_fraction * ids.size()));
  if (n_train >= static_cast<int>(ids.size()))
    throw UsageError("split_protocol: test partition would be empty (train_fraction too high)");

  std::set<int> train_ids(ids.begin(), ids.begin() + n_train);
  SplitResult out;
  for (const auto& rec : data.records) {
    if (train_ids.count(rec.identity)) {
      out.train.records.push_back(rec);
    } else if (rec.view == View::A) {
      out.probe.records.push_back(rec);
    } else {
      out.gallery.records.push_back(rec);
    }
  }
  return out;
}

}  // namespace s2s
