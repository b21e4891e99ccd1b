#include "qst/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

#include "qst/errors.hpp"

namespace qst {

namespace fs = std::filesystem;

namespace {

std::uint64_t to_little(std::uint64_t x) {
  if constexpr (std::endian::native == std::endian::little) return x;
  std::uint64_t r = 0;
  for (int i = 0; i < 8; ++i) r |= ((x >> (8 * i)) & 0xff) << (8 * (7 - i));
  return r;
}

void put_double(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  bits = to_little(bits);
  char buf[8];
  std::memcpy(buf, &bits, 8);
  out.append(buf, 8);
}

double get_double(const char* p) {
  std::uint64_t bits;
  std::memcpy(&bits, p, 8);
  bits = to_little(bits);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("failed reading " + path.string());
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) throw IoError("failed writing " + path.string());
}

std::int64_t product(const std::vector<int>& dims) {
  std::int64_t p = 1;
  for (int d : dims) p *= d;
  return p;
}

Matrix as_matrix(const LoadedArray& a, std::int64_t rows, std::int64_t cols) {
  if (static_cast<std::int64_t>(a.values.size()) != rows * cols)
    throw IoError("array holds " + std::to_string(a.values.size()) + " values, expected " + std::to_string(rows * cols));
  Matrix m(rows, cols);
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < cols; ++j) m(i, j) = a.values[i * cols + j];
  return m;
}

template <class T>
T extra_field(const Manifest& m, const std::string& key, T fallback) {
  if (!m.extra.contains(key)) return fallback;
  try {
    return m.extra.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("manifest field '" + key + "': " + e.what());
  }
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw IoError("SHA-256 computation failed");
  std::ostringstream ss;
  for (unsigned int i = 0; i < len; ++i) ss << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return ss.str();
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

Manifest write_array(const fs::path& manifest_path, const std::string& kind, const std::vector<int>& dims,
                     const Matrix& data, const nlohmann::json& extra) {
  std::string bytes;
  bytes.reserve(static_cast<std::size_t>(data.size()) * 16);
  for (Eigen::Index i = 0; i < data.rows(); ++i)
    for (Eigen::Index j = 0; j < data.cols(); ++j) {
      put_double(bytes, data(i, j).real());
      put_double(bytes, data(i, j).imag());
    }
  Manifest m;
  m.kind = kind;
  m.dims = dims;
  m.data_file = manifest_path.stem().string() + ".bin";
  m.sha256 = sha256_hex(bytes);
  m.extra = extra;
  const fs::path dir = manifest_path.parent_path();
  write_file(dir / m.data_file, bytes);

  nlohmann::json j = extra;
  j["kind"] = m.kind;
  j["dims"] = m.dims;
  j["dtype"] = m.dtype;
  j["data_file"] = m.data_file;
  j["sha256"] = m.sha256;
  write_json(manifest_path, j);
  return m;
}

LoadedArray read_array(const fs::path& manifest_path, const std::string& expected_kind) {
  const nlohmann::json j = read_json(manifest_path);
  LoadedArray out;
  Manifest& m = out.manifest;
  try {
    m.kind = j.at("kind").get<std::string>();
    m.dims = j.at("dims").get<std::vector<int>>();
    m.dtype = j.at("dtype").get<std::string>();
    m.data_file = j.at("data_file").get<std::string>();
    m.sha256 = j.at("sha256").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("manifest " + manifest_path.string() + ": " + e.what());
  }
  m.extra = j;
  for (const char* key : {"kind", "dims", "dtype", "data_file", "sha256"}) m.extra.erase(key);
  if (!expected_kind.empty() && m.kind != expected_kind)
    throw IoError("manifest kind '" + m.kind + "' where '" + expected_kind + "' is required");
  if (m.dtype != "c128") throw IoError("unsupported dtype '" + m.dtype + "'");

  const std::string bytes = read_file(manifest_path.parent_path() / m.data_file);
  if (sha256_hex(bytes) != m.sha256) throw IoError("checksum mismatch for " + m.data_file);
  if (bytes.size() % 16 != 0) throw IoError("data file size is not a multiple of 16 bytes");
  out.values.resize(bytes.size() / 16);
  for (std::size_t i = 0; i < out.values.size(); ++i)
    out.values[i] = cplx(get_double(bytes.data() + 16 * i), get_double(bytes.data() + 16 * i + 8));
  return out;
}

void save_state(const fs::path& path, const PureState& psi) {
  write_array(path, "pure", psi.shape().dims(), psi.amplitudes());
}

PureState load_state(const fs::path& path) {
  const LoadedArray a = read_array(path, "pure");
  const Matrix v = as_matrix(a, product(a.manifest.dims), 1);
  return PureState(SystemShape(a.manifest.dims), v.col(0));
}

void save_density(const fs::path& path, const DensityOperator& rho, const std::vector<int>& sites,
                  const std::vector<int>& parent_dims) {
  nlohmann::json extra = nlohmann::json::object();
  if (!sites.empty()) extra["sites"] = sites;
  if (!parent_dims.empty()) extra["parent_dims"] = parent_dims;
  write_array(path, "density", rho.shape().dims(), rho.matrix(), extra);
}

LoadedDensity load_density(const fs::path& path) {
  const LoadedArray a = read_array(path, "density");
  const std::int64_t n = product(a.manifest.dims);
  return {DensityOperator(SystemShape(a.manifest.dims), as_matrix(a, n, n)),
          extra_field<std::vector<int>>(a.manifest, "sites", {}),
          extra_field<std::vector<int>>(a.manifest, "parent_dims", {})};
}

void save_unitary(const fs::path& path, const UnitaryMatrix& u) { write_array(path, "unitary", {u.dim()}, u.matrix()); }

UnitaryMatrix load_unitary(const fs::path& path) {
  const LoadedArray a = read_array(path, "unitary");
  if (a.manifest.dims.size() != 1) throw IoError("unitary manifest needs one dimension");
  const std::int64_t n = a.manifest.dims[0];
  return UnitaryMatrix(as_matrix(a, n, n));
}

void save_records(const fs::path& path, const RecordSet& set) {
  std::int64_t total = 0;
  for (const auto& g : set.groups) total += static_cast<std::int64_t>(g.size());
  Matrix values(total, 1);
  nlohmann::json groups = nlohmann::json::array();
  std::int64_t row = 0;
  for (const auto& g : set.groups) {
    if (g.empty()) throw ValidationError("empty record group");
    groups.push_back({{"subset", g.front().subset},
                      {"count", g.size()},
                      {"shots", g.front().shots},
                      {"seed", g.front().seed}});
    for (const ExpectationRecord& r : g) values(row++, 0) = r.value;
  }
  nlohmann::json extra;
  extra["local_dim"] = set.d;
  extra["parent_dims"] = set.parent_dims;
  extra["groups"] = groups;
  extra["measurement_unit"] = "expectation value of one product-basis observable";
  extra["order"] = "product-basis multi-index, first site slowest; shots 0 means exact";
  write_array(path, "records", {static_cast<int>(total)}, values, extra);
}

RecordSet load_records(const fs::path& path) {
  const LoadedArray a = read_array(path, "records");
  RecordSet set;
  set.d = extra_field<int>(a.manifest, "local_dim", 0);
  set.parent_dims = extra_field<std::vector<int>>(a.manifest, "parent_dims", {});
  if (set.d < 2) throw IoError("records manifest needs local_dim >= 2");
  const nlohmann::json groups = extra_field<nlohmann::json>(a.manifest, "groups", nlohmann::json::array());
  std::size_t pos = 0;
  try {
    for (const auto& g : groups) {
      const auto subset = g.at("subset").get<std::vector<int>>();
      const auto count = g.at("count").get<std::size_t>();
      const auto shots = g.at("shots").get<std::int64_t>();
      const auto seed = g.at("seed").get<std::uint64_t>();
      if (pos + count > a.values.size()) throw IoError("record groups exceed the data file");
      std::vector<ExpectationRecord> recs;
      const int base = set.d * set.d;
      for (std::size_t r = 0; r < count; ++r) {
        std::vector<int> idx(subset.size());
        std::size_t f = r;
        for (int s = static_cast<int>(subset.size()) - 1; s >= 0; --s) {
          idx[s] = static_cast<int>(f % base);
          f /= base;
        }
        recs.push_back({subset, idx, a.values[pos + r].real(), shots, seed});
      }
      pos += count;
      set.groups.push_back(std::move(recs));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("records manifest: ") + e.what());
  }
  if (pos != a.values.size()) throw IoError("record groups do not cover the data file");
  return set;
}

nlohmann::json read_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_file(path, j.dump(2) + "\n"); }

}  // namespace qst
