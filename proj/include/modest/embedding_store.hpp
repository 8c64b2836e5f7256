#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "modest/errors.hpp"
#include "modest/matrix.hpp"

namespace modest {

// Rows below this Euclidean norm are treated as zero vectors: normalizing
// them is numerically meaningless.
inline constexpr double kZeroRowNorm = 1e-12;

// Tolerance on the unit-norm claim carried by the `normalized` flag.
inline constexpr double kUnitNormTolerance = 1e-5;

/// Dense table of float32 embeddings, one row per item. Instances are
/// immutable after construction and safe to share across threads.
struct EmbeddingMatrix {
  Index count = 0;
  Index dim = 0;
  RowMatrixXf data;  // count x dim, row-major
  bool normalized = false;
};

enum class Quality { matched, partial, mismatched };

std::string to_string(Quality q);
Quality quality_from_string(std::string_view s);

/// Two row-aligned embedding tables: row i of x is the declared positive of
/// row i of y. `quality` is either empty or one label per row.
struct PairedDataset {
  EmbeddingMatrix x;  // visual side
  EmbeddingMatrix y;  // textual side
  std::vector<Quality> quality;
};

/// Builds a matrix and enforces the invariants (finite values, row norms
/// consistent with the `normalized` flag).
EmbeddingMatrix make_embedding_matrix(RowMatrixXf data, bool normalized);

/// Throws if any invariant is violated; identifies the offending row.
void check_invariants(const EmbeddingMatrix& m);

/// Reads a MALN file. Errors carry the byte offset or row index.
EmbeddingMatrix load_embeddings(const std::filesystem::path& path);

/// Writes a MALN file; load(save(m)) reproduces m bit-exactly.
void save_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path);

/// Divides every row by its Euclidean norm (64-bit accumulation).
EmbeddingMatrix l2_normalize(const EmbeddingMatrix& m);

/// Returns normally iff the PairedDataset invariants hold.
void validate_pairing(const PairedDataset& ds);

/// Quality sidecar: one label per line.
std::vector<Quality> load_quality(const std::filesystem::path& path);
void save_quality(std::span<const Quality> labels, const std::filesystem::path& path);

/// Row subset, preserving pairing and quality labels.
PairedDataset subset(const PairedDataset& ds, std::span<const Index> rows);

/// Cosine between row i of x and row i of y. When the modality dims differ,
/// the dot product runs over the common coordinate prefix while the norms
/// use the full vectors (the shorter vector is implicitly zero-padded).
/// Throws ZeroRow when either side is effectively zero.
double paired_cosine(const PairedDataset& ds, Index row);

}  // namespace modest
