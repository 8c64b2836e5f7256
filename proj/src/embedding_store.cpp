#include "modest/embedding_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace modest {
namespace {

// MALN layout: magic "MALN", version byte, dtype byte (1 = float32 LE),
// normalized byte, reserved byte, u64 count, u32 dim, u32 reserved. 24 bytes.
constexpr char kMagic[4] = {'M', 'A', 'L', 'N'};
constexpr std::size_t kHeaderSize = 24;
constexpr std::uint8_t kVersion = 1;
constexpr std::uint8_t kDtypeFloat32 = 1;

static_assert(std::endian::native == std::endian::little,
              "MALN I/O assumes a little-endian host");

void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
}

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[i]) << (8 * i);
  return v;
}

std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::string to_string(Quality q) {
  switch (q) {
    case Quality::matched: return "matched";
    case Quality::partial: return "partial";
    case Quality::mismatched: return "mismatched";
  }
  fail(Errc::bad_label, "unknown quality value");
}

Quality quality_from_string(std::string_view s) {
  if (s == "matched") return Quality::matched;
  if (s == "partial") return Quality::partial;
  if (s == "mismatched") return Quality::mismatched;
  fail(Errc::bad_label, "unknown quality label '" + std::string(s) + "'");
}

void check_invariants(const EmbeddingMatrix& m) {
  if (m.data.rows() != m.count || m.data.cols() != m.dim)
    fail(Errc::shape_mismatch, "embedding data shape does not match count x dim");
  for (Index i = 0; i < m.count; ++i) {
    for (Index j = 0; j < m.dim; ++j) {
      if (!std::isfinite(m.data(i, j)))
        fail(Errc::non_finite_value, "non-finite value at row " + std::to_string(i) +
                                         ", column " + std::to_string(j));
    }
  }
  if (m.normalized) {
    for (Index i = 0; i < m.count; ++i) {
      double norm = m.data.row(i).cast<double>().norm();
      if (std::abs(norm - 1.0) > kUnitNormTolerance)
        fail(Errc::non_finite_value, "row " + std::to_string(i) +
                                         " marked normalized but has norm " + std::to_string(norm));
    }
  }
}

EmbeddingMatrix make_embedding_matrix(RowMatrixXf data, bool normalized) {
  EmbeddingMatrix m;
  m.count = data.rows();
  m.dim = data.cols();
  m.data = std::move(data);
  m.normalized = normalized;
  check_invariants(m);
  return m;
}

EmbeddingMatrix load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io_failure, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(Errc::io_failure, "read error on " + path.string());

  if (bytes.size() < kHeaderSize)
    fail(Errc::truncated_file, path.string() + ": file is " + std::to_string(bytes.size()) +
                                   " bytes, header needs " + std::to_string(kHeaderSize));
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (std::memcmp(p, kMagic, 4) != 0)
    fail(Errc::bad_magic, path.string() + ": bad magic at byte offset 0");
  if (p[4] != kVersion)
    fail(Errc::version_unsupported,
         path.string() + ": version " + std::to_string(int(p[4])) + " at byte offset 4");
  if (p[5] != kDtypeFloat32)
    fail(Errc::version_unsupported,
         path.string() + ": dtype code " + std::to_string(int(p[5])) + " at byte offset 5");
  const bool normalized = p[6] != 0;

  const std::uint64_t count = get_u64(p + 8);
  const std::uint32_t dim = get_u32(p + 16);
  const std::uint64_t payload = count * std::uint64_t(dim) * 4;
  if (bytes.size() != kHeaderSize + payload)
    fail(Errc::truncated_file, path.string() + ": expected " +
                                   std::to_string(kHeaderSize + payload) + " bytes, found " +
                                   std::to_string(bytes.size()));

  EmbeddingMatrix m;
  m.count = Index(count);
  m.dim = Index(dim);
  m.normalized = normalized;
  m.data.resize(m.count, m.dim);
  if (payload > 0) std::memcpy(m.data.data(), p + kHeaderSize, payload);

  for (Index i = 0; i < m.count; ++i)
    for (Index j = 0; j < m.dim; ++j)
      if (!std::isfinite(m.data(i, j)))
        fail(Errc::non_finite_value, path.string() + ": non-finite value at row " +
                                         std::to_string(i));
  if (m.normalized) check_invariants(m);
  return m;
}

void save_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path) {
  std::string buf;
  buf.reserve(kHeaderSize + std::size_t(m.count) * std::size_t(m.dim) * 4);
  buf.append(kMagic, 4);
  buf.push_back(char(kVersion));
  buf.push_back(char(kDtypeFloat32));
  buf.push_back(char(m.normalized ? 1 : 0));
  buf.push_back(0);
  put_u64(buf, std::uint64_t(m.count));
  put_u32(buf, std::uint32_t(m.dim));
  put_u32(buf, 0);
  if (m.count * m.dim > 0)
    buf.append(reinterpret_cast<const char*>(m.data.data()),
               std::size_t(m.count) * std::size_t(m.dim) * 4);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::io_failure, "cannot open " + path.string() + " for writing");
  out.write(buf.data(), std::streamsize(buf.size()));
  out.flush();
  if (!out) fail(Errc::io_failure, "write error on " + path.string());
}

EmbeddingMatrix l2_normalize(const EmbeddingMatrix& m) {
  EmbeddingMatrix out;
  out.count = m.count;
  out.dim = m.dim;
  out.normalized = true;
  out.data.resize(m.count, m.dim);
  for (Index i = 0; i < m.count; ++i) {
    double norm = m.data.row(i).cast<double>().norm();
    if (norm < kZeroRowNorm)
      fail(Errc::zero_row, "row " + std::to_string(i) + " has norm below 1e-12");
    out.data.row(i) = (m.data.row(i).cast<double>() / norm).cast<float>();
  }
  return out;
}

void validate_pairing(const PairedDataset& ds) {
  if (ds.x.count != ds.y.count)
    fail(Errc::count_mismatch, "x has " + std::to_string(ds.x.count) + " rows, y has " +
                                   std::to_string(ds.y.count));
  if (!ds.quality.empty() && Index(ds.quality.size()) != ds.x.count)
    fail(Errc::quality_length_mismatch,
         "quality has " + std::to_string(ds.quality.size()) + " labels for " +
             std::to_string(ds.x.count) + " rows");
}

std::vector<Quality> load_quality(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::io_failure, "cannot open " + path.string());
  std::vector<Quality> labels;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    labels.push_back(quality_from_string(line));
  }
  return labels;
}

void save_quality(std::span<const Quality> labels, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(Errc::io_failure, "cannot open " + path.string() + " for writing");
  for (Quality q : labels) out << to_string(q) << '\n';
  out.flush();
  if (!out) fail(Errc::io_failure, "write error on " + path.string());
}

double paired_cosine(const PairedDataset& ds, Index row) {
  if (row < 0 || row >= ds.x.count)
    fail(Errc::index_out_of_range, "row " + std::to_string(row));
  const Index common = std::min(ds.x.dim, ds.y.dim);
  const double nx = ds.x.data.row(row).cast<double>().norm();
  const double ny = ds.y.data.row(row).cast<double>().norm();
  if (nx < kZeroRowNorm || ny < kZeroRowNorm)
    fail(Errc::zero_row, "row " + std::to_string(row) + " has a zero vector");
  const double dot = ds.x.data.row(row).head(common).cast<double>().dot(
      ds.y.data.row(row).head(common).cast<double>());
  return dot / (nx * ny);
}

PairedDataset subset(const PairedDataset& ds, std::span<const Index> rows) {
  validate_pairing(ds);
  PairedDataset out;
  out.x.count = Index(rows.size());
  out.x.dim = ds.x.dim;
  out.x.normalized = ds.x.normalized;
  out.x.data.resize(out.x.count, out.x.dim);
  out.y.count = Index(rows.size());
  out.y.dim = ds.y.dim;
  out.y.normalized = ds.y.normalized;
  out.y.data.resize(out.y.count, out.y.dim);
  for (Index i = 0; i < Index(rows.size()); ++i) {
    Index r = rows[i];
    if (r < 0 || r >= ds.x.count)
      fail(Errc::index_out_of_range, "subset row " + std::to_string(r));
    out.x.data.row(i) = ds.x.data.row(r);
    out.y.data.row(i) = ds.y.data.row(r);
  }
  if (!ds.quality.empty()) {
    out.quality.reserve(rows.size());
    for (Index r : rows) out.quality.push_back(ds.quality[std::size_t(r)]);
  }
  return out;
}

}  // namespace modest
