#pragma once
// A small NRRD subset (3-D, raw encoding, little-endian, axis-aligned
// geometry) and comma-separated patient tables.

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "nnynet/volume.hpp"

namespace nnynet::io {

class NrrdError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class NrrdType { float32, int16, uint8 };

struct NrrdHeader {
  std::string magic;
  NrrdType type = NrrdType::float32;
  Shape sizes;  // axis 0 fastest in the payload
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};
  std::size_t header_bytes = 0;
};

NrrdHeader parse_nrrd_header(std::string_view bytes);

// Payload converted to f32. Grid index [i, j, k] holds the payload element at
// i + s0 * (j + s1 * k).
Volume parse_nrrd(std::string_view bytes);
// Integer payload; float payloads must hold integral values.
LabelMask parse_label_nrrd(std::string_view bytes);

std::string write_nrrd(const Volume& v);
// uchar when every label fits in a byte, short otherwise.
std::string write_nrrd(const LabelMask& m);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

Volume load_volume(const std::string& path);
LabelMask load_label_mask(const std::string& path);
void save_volume(const std::string& path, const Volume& v);
void save_label_mask(const std::string& path, const LabelMask& m);

enum class FeatureKind { continuous, categorical };

struct PatientRecord {
  std::string id;
  std::vector<double> features;   // categorical entries hold integer codes
  std::vector<bool> missing;      // missing entries hold 0.0
  std::vector<FeatureKind> kind;
};

struct PatientTable {
  std::string id_column = "id";
  std::vector<std::string> columns;              // feature columns, id excluded
  std::vector<FeatureKind> kinds;                // per feature column
  std::vector<std::vector<std::string>> categories;  // code -> string, categorical columns only
  std::vector<PatientRecord> records;

  std::size_t feature_count() const { return columns.size(); }
  const PatientRecord& find(const std::string& id) const;
};

struct ColumnSchema {
  std::string name;
  FeatureKind kind;
};

// First column is the record id; remaining columns are features. Columns
// without an explicit schema entry are continuous when every present cell
// parses as a number and categorical otherwise.
PatientTable load_table(std::string_view text, const std::vector<ColumnSchema>& schema = {});
// Inverse of load_table; missing cells are written empty.
std::string write_table(const PatientTable& table);

}  // namespace nnynet::io
