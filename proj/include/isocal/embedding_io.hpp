#pragma once

#include <filesystem>
#include <iosfwd>

#include "isocal/flow.hpp"
#include "isocal/matrix.hpp"

namespace isocal {

// ISOEMB version 1:
//   line 1:      ISOEMB 1 <N> <d>
//   lines 2..N+1: d values, %.17g, separated by single spaces
// Every line ends with '\n'. Reading back yields the identical doubles.

void write_embeddings(const Matrix& w, std::ostream& out);
void write_embeddings(const Matrix& w, const std::filesystem::path& path);

/// Throws ParseError (with line number) on a bad header, an unsupported
/// version, wrong field counts or non-finite values; IoError if the file
/// cannot be opened.
Matrix read_embeddings(std::istream& in);
Matrix read_embeddings(const std::filesystem::path& path);

// ISOFLOW version 1:
//   ISOFLOW 1 <dim> <layers> <hidden> <s_max>
// then for each layer, eight lines (scale net w1 b1 w2 b2, shift net w1 b1 w2 b2),
// each holding that block's values row-major (%.17g, single spaces; an empty
// block is an empty line). Masks are not stored: they follow make_flow.

void write_flow(const FlowModel& model, const std::filesystem::path& path);
FlowModel read_flow(const std::filesystem::path& path);

}  // namespace isocal
