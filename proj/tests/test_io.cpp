#include "mppca/dpmix.hpp"
#include "mppca/io.hpp"
#include "mppca/random.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

using namespace mppca;
using namespace mppca::io;

namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Doubles, ShortestRoundTrip) {
  Rng rng = make_rng(1);
  std::normal_distribution<double> n(0.0, 1e3);
  for (int i = 0; i < 2000; ++i) {
    const double v = n(rng) * std::pow(10.0, static_cast<int>(i % 40) - 20);
    EXPECT_EQ(parse_double(format_double(v)), v);
  }
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(2.0), "2");
  EXPECT_EQ(parse_double(format_double(std::numeric_limits<double>::denorm_min())),
            std::numeric_limits<double>::denorm_min());
}

TEST(Doubles, StrictParse) {
  EXPECT_DOUBLE_EQ(parse_double(" 1.5 "), 1.5);
  EXPECT_THROW(parse_double("1.5x"), std::invalid_argument);
  EXPECT_THROW(parse_double(""), std::invalid_argument);
  EXPECT_THROW(parse_double("abc"), std::invalid_argument);
}

TEST(Csv, SplitFields) {
  EXPECT_EQ(split_csv_line("a,b,,c"), (std::vector<std::string>{"a", "b", "", "c"}));
}

TEST(Table, RoundTripIsBitExact) {
  Rng rng = make_rng(2);
  Table t{{"name", "x", "y"}, {"p", "q", "r"}, standard_normal(rng, 3, 2)};
  const Table back = table_from_csv(table_to_csv(t), true);
  EXPECT_EQ(back.header, t.header);
  EXPECT_EQ(back.labels, t.labels);
  EXPECT_EQ(back.values, t.values);
  EXPECT_EQ(table_to_csv(back), table_to_csv(t));
}

TEST(Table, RaggedRowNamesLine) {
  const std::string msg = error_of([] { table_from_csv("x,y\n1,2\n3\n", false, "in.csv"); });
  EXPECT_NE(msg.find("in.csv:3"), std::string::npos) << msg;
  EXPECT_THROW(table_from_csv("x,y\n1,2\n3\n"), DimensionError);
}

TEST(Table, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "mppca_io_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "t.csv").string();
  Table t{{"a", "b"}, {}, (Matrix(2, 2) << 1, 2.5, -3, 1e-300).finished()};
  write_table(path, t);
  EXPECT_EQ(read_table(path).values, t.values);
  EXPECT_THROW(read_table((dir / "missing.csv").string()), std::runtime_error);
}

TEST(IdRows, CommentsBlankLinesAndDuplicates) {
  const IdRows r = id_rows_from_csv("# header comment\na,1,2\n\nb,3,4\n");
  EXPECT_EQ(r.ids, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(r.values(1, 1), 4.0);
  EXPECT_EQ(id_rows_from_csv(id_rows_to_csv(r)).values, r.values);
  const std::string dup = error_of([] { id_rows_from_csv("a,1\na,2\n", "e.csv"); });
  EXPECT_NE(dup.find("e.csv:2"), std::string::npos) << dup;
  EXPECT_NE(dup.find("duplicate"), std::string::npos);
  const std::string bad = error_of([] { id_rows_from_csv("a,1\nb,x\n", "e.csv"); });
  EXPECT_NE(bad.find("e.csv:2"), std::string::npos) << bad;
}

TEST(SoftLabels, JoinFollowsEmbeddingOrder) {
  const IdRows emb = id_rows_from_csv("a,1,0\nb,0,1\nc,1,1\n");
  const IdRows lab = id_rows_from_csv("c,0.5,0.5\na,1,0\nb,0.2,0.8\n");
  const auto batch = join_soft_labels(emb, lab);
  EXPECT_EQ(batch.targets(0, 0), 1.0);
  EXPECT_EQ(batch.targets(1, 1), 0.8);
  EXPECT_EQ(batch.targets(2, 0), 0.5);
  EXPECT_EQ(batch.embeddings, emb.values);
}

TEST(SoftLabels, MismatchedIdsAreListed) {
  const IdRows emb = id_rows_from_csv("a,1\nb,2\n");
  const IdRows lab = id_rows_from_csv("a,0.5,0.5\nz,1,0\n");
  const std::string msg = error_of([&] { join_soft_labels(emb, lab); });
  EXPECT_NE(msg.find("b"), std::string::npos) << msg;
  EXPECT_NE(msg.find("z"), std::string::npos) << msg;
}

TEST(SoftLabels, BadRowIsNamed) {
  const IdRows emb = id_rows_from_csv("a,1\nb,2\n");
  const IdRows lab = id_rows_from_csv("a,0.5,0.5\nb,0.5,0.3\n");
  const std::string msg = error_of([&] { join_soft_labels(emb, lab, "labels.csv"); });
  EXPECT_NE(msg.find("labels.csv: row 2 (id b)"), std::string::npos) << msg;
  EXPECT_NE(msg.find("0.8"), std::string::npos) << msg;
  const IdRows neg = id_rows_from_csv("a,1.5,-0.5\nb,0.5,0.5\n");
  EXPECT_NE(error_of([&] { join_soft_labels(emb, neg); }).find("negative"), std::string::npos);
}

TEST(ModelJson, RoundTripIsExact) {
  dpmix::Hyperparams h;
  h.alpha_nu = 0.25;
  h.xi_var = 0.04;
  const auto g = dpmix::generate_structured(h, 3, {0, 0, 1}, 50, 4);
  const auto fit = dpmix::fit_supervised(g.data, h);
  const std::string text = model_to_json(fit.model);
  const auto back = model_from_json(text);
  EXPECT_EQ(model_to_json(back), text);
  ASSERT_EQ(back.num_categories(), fit.model.num_categories());
  for (Index c = 0; c < back.num_categories(); ++c) {
    EXPECT_EQ(back.categories[static_cast<std::size_t>(c)].W, fit.model.categories[static_cast<std::size_t>(c)].W);
    EXPECT_EQ(back.categories[static_cast<std::size_t>(c)].sigma2,
              fit.model.categories[static_cast<std::size_t>(c)].sigma2);
  }
  EXPECT_EQ(back.ownership, fit.model.ownership);
  EXPECT_EQ(back.hyper.xi_var, 0.04);
}

TEST(HeadsJson, RoundTripIsExact) {
  Rng rng = make_rng(6);
  deep::HeadParams p;
  for (int c = 0; c < 3; ++c) p.heads.push_back({standard_normal(rng, 4), standard_normal(rng, 4), -0.3 * c});
  const auto back = heads_from_json(heads_to_json(p));
  for (int c = 0; c < 3; ++c) {
    EXPECT_EQ(back.heads[c].mu, p.heads[c].mu);
    EXPECT_EQ(back.heads[c].w, p.heads[c].w);
    EXPECT_EQ(back.heads[c].log_sigma2, p.heads[c].log_sigma2);
  }
  EXPECT_THROW(heads_from_json("{\"d_emb\": 4, \"C\": 2, \"heads\": []}"), std::exception);
}
