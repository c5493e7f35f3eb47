#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "flobloch/scenario.hpp"

using namespace flobloch;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  return out;
}

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("flobloch_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

// n = 10, E_R = 100, T_B = n/f
json fast_reduced(double f = 10.0) {
  return json{{"mode", "evolve_reduced"},
              {"name", "fast"},
              {"reduced", {{"M", 0.5}, {"n", 10}, {"V_n", 50.0}, {"f", f}, {"Omega", 0.1}}},
              {"sim", {{"periods", 3.5}}}};
}

json fig1_bands() {
  return json{{"mode", "bands"},
              {"reduced", {{"M", 50.0}, {"n", 100}, {"V_n", 50.0}, {"f", 4.0 / pi}}},
              {"sim", {{"q_points", 41}, {"bands", 2}}}};
}

json well_bands() {
  return json{{"mode", "bands"},
              {"well", {{"kind", "triangular"}, {"m", 1.0}, {"eta", 1.0}}},
              {"E0", 100.0},
              {"drive", {{"n", 10}, {"lambda", 0.012}}},
              {"probe", {{"instrument", "tachometer"}, {"w_z", 0.0078}, {"y0", 1.0}, {"tau", 1.4}}},
              {"sim", {{"q_points", 21}, {"bands", 2}}}};
}

ErrorKind kind_of(const std::function<void()>& f, std::string* what = nullptr) {
  try {
    f();
  } catch (const Error& e) {
    if (what) *what = e.what();
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::Io;
}

}  // namespace

TEST(Config, UnknownKeyIsParseErrorWithPointer) {
  json doc = fast_reduced();
  doc["foo"] = 1;
  std::string what;
  EXPECT_EQ(kind_of([&] { parse_config(doc); }, &what), ErrorKind::Parse);
  EXPECT_NE(what.find("/foo"), std::string::npos) << what;
  doc = fast_reduced();
  doc["reduced"]["bar"] = 1;
  EXPECT_EQ(kind_of([&] { parse_config(doc); }, &what), ErrorKind::Parse);
  EXPECT_NE(what.find("/reduced/bar"), std::string::npos) << what;
}

TEST(Config, TypeErrorsAndMalformedJson) {
  json doc = fast_reduced();
  doc["reduced"]["n"] = "ten";
  std::string what;
  EXPECT_EQ(kind_of([&] { parse_config(doc); }, &what), ErrorKind::Parse);
  EXPECT_NE(what.find("/reduced/n"), std::string::npos) << what;
  EXPECT_EQ(kind_of([&] { parse_config(std::string("{\"mode\": ")); }), ErrorKind::Parse);
  EXPECT_EQ(kind_of([&] { parse_config(json::array()); }), ErrorKind::Parse);
  doc = fast_reduced();
  doc["mode"] = "warp";
  EXPECT_EQ(kind_of([&] { parse_config(doc); }), ErrorKind::Parse);
}

TEST(Config, OffResonantDriveIsValidationError) {
  json doc = well_bands();
  doc["drive"]["omega"] = 1.0;  // nΩ = 10 π/sqrt(200)
  std::string what;
  EXPECT_EQ(kind_of([&] { parse_config(doc); }, &what), ErrorKind::Validation);
  doc["drive"]["omega"] = 10 * pi / std::sqrt(200.0);
  EXPECT_NO_THROW(parse_config(doc));
}

TEST(Config, ModeMismatchAndMixedModels) {
  EXPECT_EQ(kind_of([&] { parse_config(fast_reduced(), Mode::Bands); }), ErrorKind::Configuration);
  json doc = fast_reduced();
  doc["E0"] = 1.0;
  EXPECT_EQ(kind_of([&] { parse_config(doc); }), ErrorKind::Configuration);
  doc = fast_reduced(0.0);
  EXPECT_EQ(kind_of([&] { parse_config(doc); }), ErrorKind::Validation);
}

TEST(Config, MissingModeTakenFromSubcommand) {
  json doc = fig1_bands();
  doc.erase("mode");
  EXPECT_EQ(parse_config(doc, Mode::Bands).mode, Mode::Bands);
}

TEST(Manifest, ReferenceLatticeBlochPeriod) {
  TempDir tmp;
  const auto r = run_scenario(parse_config(fig1_bands()), tmp.path());
  const json m = json::parse(slurp(tmp.path() / "manifest.json"));
  EXPECT_NEAR(m["derived"]["T_B_predicted"].get<double>(), 25 * pi, 1e-12);
  EXPECT_NEAR(r.T_B_predicted, 25 * pi, 1e-12);
  EXPECT_NEAR(m["derived"]["recoil_energy"].get<double>(), 100.0, 1e-12);
}

TEST(Manifest, DerivedValuesRecompute) {
  TempDir tmp;
  run_scenario(parse_config(well_bands()), tmp.path());
  const json m = json::parse(slurp(tmp.path() / "manifest.json"));
  const json& d = m["derived"];
  const ActionAngleMap map(WellSpec::triangular(1, 1), 100.0);
  auto rel = [](double a, double b) { return std::abs(a - b) / std::abs(b); };
  EXPECT_LT(rel(d["Omega"].get<double>(), map.Omega()), 1e-12);
  EXPECT_LT(rel(d["J0"].get<double>(), action(WellSpec::triangular(1, 1), 100.0)), 1e-12);
  EXPECT_LT(rel(d["M_eff"].get<double>(), map.M_eff()), 1e-12);
  EXPECT_LT(rel(d["M"].get<double>(), map.M_eff() / (4 * pi * pi)), 1e-12);
  EXPECT_LT(rel(d["T_D"].get<double>(), two_pi / map.Omega()), 1e-12);
  const double f = -0.0078 * 1.0 * 1.0 * 1.4 / pi;
  EXPECT_LT(rel(d["f"].get<double>(), f), 1e-12);
  EXPECT_LT(rel(d["T_B_predicted"].get<double>(), 10 / std::abs(f)), 1e-12);
  const int n = d["n"].get<int>();
  EXPECT_LT(rel(d["recoil_energy"].get<double>(), n * n / (2 * std::abs(d["M"].get<double>()))), 1e-12);
}

TEST(Manifest, ListsExactlyTheWrittenFiles) {
  TempDir tmp;
  const auto r = run_scenario(parse_config(fast_reduced()), tmp.path());
  const json m = json::parse(slurp(tmp.path() / "manifest.json"));
  std::set<std::string> listed;
  for (const auto& f : m["files"]) {
    listed.insert(f.get<std::string>());
    EXPECT_TRUE(fs::is_regular_file(tmp.path() / f.get<std::string>())) << f;
  }
  std::set<std::string> on_disk;
  for (const auto& e : fs::directory_iterator(tmp.path())) on_disk.insert(e.path().filename().string());
  on_disk.erase("manifest.json");
  EXPECT_EQ(listed, on_disk);
  EXPECT_TRUE(listed.count("reduced.csv"));
  EXPECT_TRUE(listed.count("carpet.svg"));
  ASSERT_TRUE(r.estimate);
  EXPECT_NEAR(r.estimate->T_B, 1.0, 0.02);
}

TEST(Manifest, RerunIsByteIdentical) {
  TempDir a, b;
  json doc = fast_reduced();
  doc["estimator"] = {{"noise", 0.01}};
  doc["seed"] = 5;
  run_scenario(parse_config(doc), a.path());
  run_scenario(parse_config(doc), b.path());
  EXPECT_EQ(tree(a.path()), tree(b.path()));
}

TEST(Csv, SeventeenDigitsRoundTrip) {
  for (double v : {pi, 1.0 / 3.0, -2.5e-300, 6.02214076e23}) EXPECT_EQ(std::stod(csv_number(v)), v);
  TempDir tmp;
  run_scenario(parse_config(fig1_bands()), tmp.path());
  std::istringstream is(slurp(tmp.path() / "bands.csv"));
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "q,band,energy,v_g,m_g");
  std::getline(is, line);
  EXPECT_EQ(line.substr(0, line.find(',')), "-50");
}

TEST(Artifacts, FailureRemovesPartialOutputs) {
  TempDir tmp;
  fs::create_directories(tmp.path() / "carpet.svg");  // blocks the rename
  std::string what;
  EXPECT_EQ(kind_of([&] { run_scenario(parse_config(fast_reduced()), tmp.path()); }, &what), ErrorKind::Io);
  std::vector<std::string> left;
  for (const auto& e : fs::directory_iterator(tmp.path())) left.push_back(e.path().filename().string());
  EXPECT_EQ(left, std::vector<std::string>{"carpet.svg"}) << what;
}

TEST(Artifacts, AtomicWriteLeavesNoTemp) {
  TempDir tmp;
  write_file_atomic(tmp.path() / "x.txt", "hello");
  EXPECT_EQ(slurp(tmp.path() / "x.txt"), "hello");
  EXPECT_FALSE(fs::exists(tmp.path() / "x.txt.tmp"));
  EXPECT_THROW(write_file_atomic(tmp.path() / "missing" / "x.txt", "a"), Error);
}

TEST(Carpet, MinimalAndDegenerate) {
  const std::string svg = emit_carpet({{0.0, 1.0}, {2.0, 3.0}}, {});
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  EXPECT_EQ(kind_of([] { emit_carpet({{1.0, 2.0, 3.0}}, {}); }), ErrorKind::Dimension);
  EXPECT_EQ(kind_of([] { emit_carpet({{1.0}, {2.0}}, {}); }), ErrorKind::Dimension);
  EXPECT_EQ(kind_of([] { emit_carpet({{1.0, 2.0}, {2.0}}, {}); }), ErrorKind::Dimension);
  EXPECT_EQ(kind_of([] { emit_carpet({{1.0, std::nan("")}, {2.0, 1.0}}, {}); }), ErrorKind::Numeric);
}

TEST(Carpet, ConstantDensityIsUniform) {
  const std::string svg = emit_carpet(std::vector<std::vector<double>>(5, std::vector<double>(7, 0.3)), {});
  std::set<std::string> fills;
  std::size_t cells = 0;
  for (std::size_t p = svg.find("fill=\"rgb("); p != std::string::npos; p = svg.find("fill=\"rgb(", p + 1)) {
    fills.insert(svg.substr(p, svg.find(')', p) - p));
    ++cells;
  }
  EXPECT_EQ(cells, 35u);
  EXPECT_EQ(fills.size(), 1u);
}

TEST(Carpet, BlockAverageKeepsMean) {
  std::vector<std::vector<double>> m(100, std::vector<double>(64));
  double total = 0.0;
  for (std::size_t r = 0; r < 100; ++r)
    for (std::size_t c = 0; c < 64; ++c) total += m[r][c] = std::sin(0.1 * r) * std::cos(0.2 * c) + 2.0;
  const auto b = block_average(m, 10, 16);
  ASSERT_EQ(b.size(), 10u);
  ASSERT_EQ(b[0].size(), 16u);
  double sum = 0.0;
  for (const auto& row : b)
    for (double v : row) sum += v;
  EXPECT_NEAR(sum / 160, total / 6400, 1e-12);
}

TEST(Sweep, EmptyGivesHeaderOnly) {
  TempDir tmp;
  const auto rows = sweep(expand_sweep(json{{"runs", json::array()}}), 4, tmp.path());
  EXPECT_TRUE(rows.empty());
  EXPECT_EQ(sweep_summary_csv(rows), "index,name,mode,status,T_B_predicted,T_B_measured,T_B_sigma,value,unit,message\n");
}

TEST(Sweep, ParallelismDoesNotChangeOutputs) {
  json doc{{"base", fast_reduced()}, {"runs", json::array()}};
  for (double f : {8.0, 10.0, 12.0, 14.0, 16.0}) doc["runs"].push_back({{"reduced", {{"f", f}}}});
  json bands = fig1_bands();
  bands["sim"]["periods"] = nullptr;  // drop the base's reduced-mode key
  doc["runs"].push_back(bands);
  TempDir a, b;
  const auto ra = sweep(expand_sweep(doc), 1, a.path());
  const auto rb = sweep(expand_sweep(doc), 8, b.path());
  EXPECT_EQ(sweep_summary_csv(ra), sweep_summary_csv(rb));
  EXPECT_EQ(tree(a.path()), tree(b.path()));
  for (const auto& r : ra) EXPECT_TRUE(r.ok) << r.message;
  EXPECT_TRUE(fs::exists(a.path() / "run_5" / "bands.csv"));
  // the measured period follows n/f
  EXPECT_NEAR(ra[2].T_B_measured, 10.0 / 12.0, 0.01);
}

TEST(Sweep, FailedRowDoesNotStopOthers) {
  json doc{{"base", fast_reduced()}, {"runs", json::array()}};
  doc["runs"].push_back({{"name", "ok"}});
  doc["runs"].push_back({{"name", "bad, quoted"}, {"reduced", {{"M", 0.0}}}});
  doc["runs"].push_back({{"name", "dup"}, {"output_dir", "run_0"}});
  TempDir tmp;
  const auto rows = sweep(expand_sweep(doc), 2, tmp.path());
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_TRUE(rows[0].ok);
  EXPECT_FALSE(rows[1].ok);
  EXPECT_FALSE(rows[2].ok);
  EXPECT_NE(rows[2].message.find("output_dir"), std::string::npos);
  const std::string csv = sweep_summary_csv(rows);
  EXPECT_NE(csv.find("\"bad, quoted\""), std::string::npos);
}

TEST(Sweep, ExpandRejectsUnknownKeys) {
  EXPECT_EQ(kind_of([] { expand_sweep(json{{"runs", json::array()}, {"extra", 1}}); }), ErrorKind::Parse);
  EXPECT_EQ(kind_of([] { expand_sweep(json{{"base", json::object()}}); }), ErrorKind::Parse);
  const auto docs = expand_sweep(json{{"base", {{"a", 1}, {"b", {{"c", 2}}}}}, {"runs", {{{"b", {{"d", 3}}}}}}});
  EXPECT_EQ(docs.at(0), (json{{"a", 1}, {"b", {{"c", 2}, {"d", 3}}}}));
}

TEST(Configs, ShippedFilesParse) {
  const fs::path dir = fs::path(FLOBLOCH_SOURCE_DIR) / "configs";
  int count = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string text = slurp(e.path());
    const json doc = json::parse(text);
    if (doc.contains("runs")) {
      for (const auto& d : expand_sweep(doc)) EXPECT_NO_THROW(parse_config(d)) << e.path();
    } else {
      EXPECT_NO_THROW(parse_config(text)) << e.path();
    }
    ++count;
  }
  EXPECT_GE(count, 10);
}
