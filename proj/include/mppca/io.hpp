#pragma once

#include "mppca/deep_head.hpp"
#include "mppca/dpmix.hpp"
#include "mppca/types.hpp"

#include <string>
#include <vector>

namespace mppca::io {

// Shortest decimal form that parses back to the same double.
std::string format_double(double v);
// Strict parse of a whole field; throws std::invalid_argument otherwise.
double parse_double(const std::string& field);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

std::vector<std::string> split_csv_line(const std::string& line);

// Table with a header row. When `labels` is non-empty the first column holds
// one text label per row and header[0] names it.
struct Table {
  std::vector<std::string> header;
  std::vector<std::string> labels;
  Matrix values;
};
std::string table_to_csv(const Table& table);
Table table_from_csv(const std::string& text, bool labeled = false, const std::string& source = "<csv>");
void write_table(const std::string& path, const Table& table);
Table read_table(const std::string& path, bool labeled = false);

// Header-less rows "id,v1,...,vk". Blank lines and lines starting with '#' are
// skipped. Errors name the file and the 1-based line number.
struct IdRows {
  std::vector<std::string> ids;
  Matrix values;
};
IdRows id_rows_from_csv(const std::string& text, const std::string& source = "<csv>");
IdRows read_id_rows(const std::string& path);
std::string id_rows_to_csv(const IdRows& rows);

// Embedding and soft-label files joined on id, in embedding-file order. Throws
// when the id sets differ (listing the offending ids) or when a probability
// row is negative or does not sum to 1 within 1e-6 (naming the line).
deep::SoftLabelBatch join_soft_labels(const IdRows& embeddings, const IdRows& labels,
                                      const std::string& label_source = "<labels>");
deep::SoftLabelBatch load_soft_labels(const std::string& embedding_path, const std::string& label_path);

// {d, shared, categories:[{mu, w, sigma2, count, label}], components, ownership, hyper}
std::string model_to_json(const dpmix::MixtureModel& model);
dpmix::MixtureModel model_from_json(const std::string& text);

// {d_emb, C, heads:[{mu, w, log_sigma2}]}
std::string heads_to_json(const deep::HeadParams& heads);
deep::HeadParams heads_from_json(const std::string& text);

}  // namespace mppca::io
