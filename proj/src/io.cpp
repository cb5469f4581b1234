#include "mppca/io.hpp"

#include "json.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace mppca::io {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string where(const std::string& source, std::size_t line) {
  return source + ":" + std::to_string(line) + ": ";
}

json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector vector_from(const json& j, Index d, const char* what) {
  const auto v = j.get<std::vector<double>>();
  require_dim(static_cast<Index>(v.size()), d, what);
  return Eigen::Map<const Vector>(v.data(), d);
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& field) {
  const std::string f = trim(field);
  double v = 0.0;
  const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
  if (f.empty() || res.ec != std::errc() || res.ptr != f.data() + f.size()) {
    throw std::invalid_argument("not a number: '" + field + "'");
  }
  return v;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
  if (!out) throw std::runtime_error("failed writing " + path);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(trim(cur));
      cur.clear();
    } else if (ch != '\r' && ch != '\n') {
      cur += ch;
    }
  }
  fields.push_back(trim(cur));
  return fields;
}

std::string table_to_csv(const Table& table) {
  const bool labeled = !table.labels.empty();
  require_dim(table.values.cols() + (labeled ? 1 : 0), static_cast<Index>(table.header.size()), "table columns");
  if (labeled) require_dim(static_cast<Index>(table.labels.size()), table.values.rows(), "table labels");
  std::string out;
  for (std::size_t c = 0; c < table.header.size(); ++c) out += (c ? "," : "") + table.header[c];
  out += '\n';
  for (Index r = 0; r < table.values.rows(); ++r) {
    bool first = true;
    if (labeled) {
      out += table.labels[static_cast<std::size_t>(r)];
      first = false;
    }
    for (Index c = 0; c < table.values.cols(); ++c) {
      out += (first ? "" : ",") + format_double(table.values(r, c));
      first = false;
    }
    out += '\n';
  }
  return out;
}

Table table_from_csv(const std::string& text, bool labeled, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  Table t;
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (t.header.empty()) {
      t.header = fields;
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw DimensionError(where(source, lineno) + "expected " + std::to_string(t.header.size()) +
                           " fields, got " + std::to_string(fields.size()));
    }
    std::vector<double> row;
    for (std::size_t c = 0; c < fields.size(); ++c) {
      if (labeled && c == 0) {
        t.labels.push_back(fields[c]);
        continue;
      }
      try {
        row.push_back(parse_double(fields[c]));
      } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(where(source, lineno) + e.what());
      }
    }
    rows.push_back(std::move(row));
  }
  require(!t.header.empty(), source + ": missing header row");
  const Index cols = static_cast<Index>(t.header.size()) - (labeled ? 1 : 0);
  t.values.resize(static_cast<Index>(rows.size()), cols);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) t.values(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
  return t;
}

void write_table(const std::string& path, const Table& table) { write_text_file(path, table_to_csv(table)); }

Table read_table(const std::string& path, bool labeled) {
  return table_from_csv(read_text_file(path), labeled, path);
}

IdRows id_rows_from_csv(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  IdRows out;
  std::vector<std::vector<double>> rows;
  std::set<std::string> seen;
  std::size_t lineno = 0, width = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto fields = split_csv_line(line);
    if (fields.size() < 2) throw std::invalid_argument(where(source, lineno) + "expected an id and at least one value");
    if (width == 0) width = fields.size();
    if (fields.size() != width) {
      throw DimensionError(where(source, lineno) + "expected " + std::to_string(width) + " fields, got " +
                           std::to_string(fields.size()));
    }
    if (!seen.insert(fields[0]).second) throw std::invalid_argument(where(source, lineno) + "duplicate id '" + fields[0] + "'");
    std::vector<double> row;
    for (std::size_t c = 1; c < fields.size(); ++c) {
      try {
        row.push_back(parse_double(fields[c]));
      } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(where(source, lineno) + e.what());
      }
    }
    out.ids.push_back(fields[0]);
    rows.push_back(std::move(row));
  }
  require(!rows.empty(), source + ": no data rows");
  out.values.resize(static_cast<Index>(rows.size()), static_cast<Index>(width - 1));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) out.values(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
  return out;
}

IdRows read_id_rows(const std::string& path) { return id_rows_from_csv(read_text_file(path), path); }

std::string id_rows_to_csv(const IdRows& rows) {
  require_dim(static_cast<Index>(rows.ids.size()), rows.values.rows(), "id count");
  std::string out;
  for (Index r = 0; r < rows.values.rows(); ++r) {
    out += rows.ids[static_cast<std::size_t>(r)];
    for (Index c = 0; c < rows.values.cols(); ++c) out += "," + format_double(rows.values(r, c));
    out += '\n';
  }
  return out;
}

deep::SoftLabelBatch join_soft_labels(const IdRows& embeddings, const IdRows& labels,
                                      const std::string& label_source) {
  std::map<std::string, Index> label_row;
  for (std::size_t i = 0; i < labels.ids.size(); ++i) label_row[labels.ids[i]] = static_cast<Index>(i);
  std::set<std::string> emb_ids(embeddings.ids.begin(), embeddings.ids.end());
  std::vector<std::string> missing, extra;
  for (const auto& id : embeddings.ids)
    if (!label_row.count(id)) missing.push_back(id);
  for (const auto& id : labels.ids)
    if (!emb_ids.count(id)) extra.push_back(id);
  if (!missing.empty() || !extra.empty()) {
    std::string msg = "embedding and soft-label ids do not match;";
    auto list = [](const std::vector<std::string>& v) {
      std::string s;
      for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : " ") + v[i];
      return s;
    };
    if (!missing.empty()) msg += " without labels:" + list(missing) + ";";
    if (!extra.empty()) msg += " without embeddings:" + list(extra) + ";";
    throw std::invalid_argument(msg);
  }

  // Validate probabilities in file order so the reported row is the file row.
  for (Index r = 0; r < labels.values.rows(); ++r) {
    const std::string tag = label_source + ": row " + std::to_string(r + 1) + " (id " +
                            labels.ids[static_cast<std::size_t>(r)] + ")";
    require((labels.values.row(r).array() >= 0).all(), tag + " has a negative probability");
    const double sum = labels.values.row(r).sum();
    require(std::abs(sum - 1.0) <= 1e-6, tag + " probabilities sum to " + format_double(sum) + ", expected 1");
  }

  deep::SoftLabelBatch batch;
  batch.embeddings = embeddings.values;
  batch.targets.resize(embeddings.values.rows(), labels.values.cols());
  for (std::size_t i = 0; i < embeddings.ids.size(); ++i) {
    batch.targets.row(static_cast<Index>(i)) = labels.values.row(label_row.at(embeddings.ids[i]));
  }
  return batch;
}

deep::SoftLabelBatch load_soft_labels(const std::string& embedding_path, const std::string& label_path) {
  return join_soft_labels(read_id_rows(embedding_path), read_id_rows(label_path), label_path);
}

std::string model_to_json(const dpmix::MixtureModel& model) {
  model.validate();
  json j;
  j["d"] = model.dim();
  j["shared"] = model.shared;
  j["categories"] = json::array();
  for (std::size_t c = 0; c < model.categories.size(); ++c) {
    const auto& p = model.categories[c];
    json cj;
    cj["mu"] = vector_json(p.mu);
    cj["w"] = vector_json(p.W.col(0));
    cj["sigma2"] = p.sigma2;
    cj["count"] = model.counts[c];
    if (!model.labels.empty()) cj["label"] = model.labels[c];
    j["categories"].push_back(cj);
  }
  j["components"] = json::array();
  for (const auto& nu : model.global_components) j["components"].push_back(vector_json(nu));
  j["ownership"] = model.ownership;
  const auto& h = model.hyper;
  j["hyper"] = {{"gamma", h.gamma},       {"gamma_star", h.gamma_star}, {"alpha_mu", h.alpha_mu},
                {"alpha_nu", h.alpha_nu}, {"a_tau", h.a_tau},           {"b_tau", h.b_tau},
                {"xi_var", h.xi_var}};
  return j.dump(2) + "\n";
}

dpmix::MixtureModel model_from_json(const std::string& text) {
  const json j = json::parse(text);
  dpmix::MixtureModel m;
  const Index d = j.at("d").get<Index>();
  m.shared = j.value("shared", true);
  bool any_label = false;
  for (const auto& cj : j.at("categories")) {
    PpcaParams p;
    p.mu = vector_from(cj.at("mu"), d, "category mu");
    p.W = vector_from(cj.at("w"), d, "category w");
    p.sigma2 = cj.at("sigma2").get<double>();
    m.categories.push_back(std::move(p));
    m.counts.push_back(cj.at("count").get<Index>());
    if (cj.contains("label")) any_label = true;
    m.labels.push_back(cj.value("label", static_cast<int>(m.labels.size())));
  }
  if (!any_label) m.labels.clear();
  for (const auto& nj : j.at("components")) m.global_components.push_back(vector_from(nj, d, "component"));
  m.ownership = j.at("ownership").get<std::vector<Index>>();
  const auto& h = j.at("hyper");
  m.hyper = {h.at("gamma").get<double>(),    h.at("gamma_star").get<double>(), h.at("alpha_mu").get<double>(),
             h.at("alpha_nu").get<double>(), h.at("a_tau").get<double>(),      h.at("b_tau").get<double>(),
             h.at("xi_var").get<double>()};
  m.validate();
  return m;
}

std::string heads_to_json(const deep::HeadParams& heads) {
  heads.validate();
  json j;
  j["d_emb"] = heads.dim();
  j["C"] = heads.num_classes();
  j["heads"] = json::array();
  for (const auto& h : heads.heads) {
    j["heads"].push_back({{"mu", vector_json(h.mu)}, {"w", vector_json(h.w)}, {"log_sigma2", h.log_sigma2}});
  }
  return j.dump(2) + "\n";
}

deep::HeadParams heads_from_json(const std::string& text) {
  const json j = json::parse(text);
  const Index d = j.at("d_emb").get<Index>();
  deep::HeadParams out;
  for (const auto& hj : j.at("heads")) {
    out.heads.push_back({vector_from(hj.at("mu"), d, "head mu"), vector_from(hj.at("w"), d, "head w"),
                         hj.at("log_sigma2").get<double>()});
  }
  require_dim(out.num_classes(), j.at("C").get<Index>(), "head count");
  out.validate();
  return out;
}

}  // namespace mppca::io
