#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

std::string cli_path() {
  const char* env = std::getenv("BACKPACK_CLI_PATH");
  if (env != nullptr) return env;
#ifdef BACKPACK_CLI_PATH
  return BACKPACK_CLI_PATH;
#else
  FAIL("BACKPACK_CLI_PATH is not defined; build through CMake or set the variable");
  return "";
#endif
}

const fs::path& work_dir() {
  static fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("backpack_cli_test_" + std::to_string(getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'')
      out += "'\\''";
    else
      out += c;
  }
  out += "'";
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CliRun {
  int exit_code = -1;
  std::string out;
  std::string err;
};

CliRun run(const std::vector<std::string>& args) {
  static int counter = 0;
  fs::path out_path = work_dir() / ("out" + std::to_string(counter));
  fs::path err_path = work_dir() / ("err" + std::to_string(counter));
  ++counter;
  std::string cmd = shell_quote(cli_path());
  for (const std::string& a : args) cmd += " " + shell_quote(a);
  cmd += " > " + shell_quote(out_path.string()) + " 2> " + shell_quote(err_path.string());
  int rc = std::system(cmd.c_str());
  CliRun r;
  r.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  r.out = slurp(out_path);
  r.err = slurp(err_path);
  return r;
}

std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream ss(s);
  std::string line;
  while (std::getline(ss, line)) out.push_back(line);
  return out;
}

// Pull the quoted text column out of a `prefix...,"text"` CSV row.
std::string quoted_field(const std::string& line) {
  size_t open = line.find('"');
  REQUIRE(open != std::string::npos);
  REQUIRE(line.back() == '"');
  std::string raw = line.substr(open + 1, line.size() - open - 2);
  std::string out;
  for (size_t i = 0; i < raw.size(); ++i) {
    out += raw[i];
    if (raw[i] == '"' && i + 1 < raw.size() && raw[i + 1] == '"') ++i;
  }
  return out;
}

// A small mixed-topic corpus and a model trained on it, built once.
const std::string& mixed_corpus() {
  static std::string path = [] {
    std::string p = (work_dir() / "mixed.txt").string();
    CliRun r = run({"make-corpus", "--out", p, "--chars", "12000", "--seed", "11"});
    REQUIRE(r.exit_code == 0);
    return p;
  }();
  return path;
}

const std::string& mixed_checkpoint() {
  static std::string path = [] {
    std::string p = (work_dir() / "mixed.bin").string();
    CliRun r = run({"train", "--corpus", mixed_corpus(), "--out", p, "--steps", "8", "--warmup",
                    "1", "--dim", "32", "--senses", "2", "--layers", "1", "--heads", "2",
                    "--seq-len", "32", "--batch-tokens", "128", "--lr", "1e-3", "--seed", "1"});
    REQUIRE(r.exit_code == 0);
    return p;
  }();
  return path;
}

// A corpus of only profession/pronoun sentences, so every profession and both
// pronouns are in the vocabulary.
const std::string& pronoun_checkpoint() {
  static std::string path = [] {
    std::string corpus = (work_dir() / "pronoun.txt").string();
    CliRun c = run({"make-corpus", "--out", corpus, "--chars", "12000", "--seed", "13",
                    "--pronoun-rate", "1.0"});
    REQUIRE(c.exit_code == 0);
    std::string p = (work_dir() / "pronoun.bin").string();
    CliRun r = run({"train", "--corpus", corpus, "--out", p, "--steps", "8", "--warmup", "1",
                    "--dim", "32", "--senses", "2", "--layers", "1", "--heads", "2", "--seq-len",
                    "32", "--batch-tokens", "128", "--lr", "1e-3", "--seed", "2"});
    REQUIRE(r.exit_code == 0);
    return p;
  }();
  return path;
}

}  // namespace

TEST_CASE("cli help and argument errors") {
  CliRun help = run({});
  CHECK(help.exit_code == 0);
  CHECK(help.out.find("usage:") != std::string::npos);
  CHECK(run({"help"}).exit_code == 0);
  CHECK(run({"--help"}).out == help.out);

  CHECK(run({"nosuchcommand"}).exit_code == 1);
  CHECK(run({"train", "--nosuchoption", "1"}).exit_code == 1);
  CHECK(run({"train", "--out", "x"}).exit_code == 1);       // missing --corpus
  CHECK(run({"train", "positional"}).exit_code == 1);       // options only
  CHECK(run({"generate", "--seed"}).exit_code == 1);        // dangling value
  CHECK(run({"eval", "--checkpoint", (work_dir() / "absent.bin").string(), "--corpus",
             mixed_corpus()})
            .exit_code == 2);
  CliRun err = run({"nosuchcommand"});
  CHECK(err.err.find("usage error") != std::string::npos);
}

TEST_CASE("config file values are overridden by explicit flags") {
  fs::path cfg = work_dir() / "train.cfg";
  {
    std::ofstream os(cfg);
    os << "# comment line\n";
    os << "lr = 1e-3\n";
    os << "steps=4\n";
    os << "dim=32\nsenses=2\nlayers=1\nheads=2\nseq-len=32\nbatch-tokens=128\nwarmup=1\n";
  }
  std::string out_ck = (work_dir() / "cfg_test.bin").string();
  CliRun r = run({"train", "--config", cfg.string(), "--corpus", mixed_corpus(), "--out", out_ck,
                  "--lr", "3e-4"});
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("resolved_config,lr,\"3e-4\"") != std::string::npos);
  CHECK(r.out.find("resolved_config,steps,\"4\"") != std::string::npos);
  CHECK(r.out.find("train,final_step,4") != std::string::npos);

  fs::path bad = work_dir() / "bad.cfg";
  {
    std::ofstream os(bad);
    os << "no equals sign here\n";
  }
  CHECK(run({"train", "--config", bad.string(), "--corpus", mixed_corpus(), "--out", out_ck})
            .exit_code == 1);
  fs::path unknown = work_dir() / "unknown.cfg";
  {
    std::ofstream os(unknown);
    os << "frobnicate=1\n";
  }
  CHECK(run({"train", "--config", unknown.string(), "--corpus", mixed_corpus(), "--out", out_ck})
            .exit_code == 1);
  fs::path nested = work_dir() / "nested.cfg";
  {
    std::ofstream os(nested);
    os << "config=other.cfg\n";
  }
  CHECK(run({"train", "--config", nested.string(), "--corpus", mixed_corpus(), "--out", out_ck})
            .exit_code == 1);
}

TEST_CASE("training writes a loss log and a reloadable checkpoint") {
  std::string loss_csv = (work_dir() / "loss.csv").string();
  std::string ck = (work_dir() / "loss_test.bin").string();
  CliRun r = run({"train", "--corpus", mixed_corpus(), "--out", ck, "--steps", "6", "--warmup",
                  "1", "--dim", "32", "--senses", "2", "--layers", "1", "--heads", "2",
                  "--seq-len", "32", "--batch-tokens", "128", "--loss-csv", loss_csv});
  REQUIRE(r.exit_code == 0);
  auto rows = lines_of(slurp(loss_csv));
  REQUIRE(rows.size() == 7);
  CHECK(rows[0] == "step,lr,train_loss,eval_loss");
  CHECK(rows[1].rfind("1,", 0) == 0);
  CHECK(rows[6].rfind("6,", 0) == 0);

  CliRun ev = run({"eval", "--checkpoint", ck, "--corpus", mixed_corpus(), "--max-tokens", "500"});
  REQUIRE(ev.exit_code == 0);
  CHECK(ev.out.find("eval,tokens,499") != std::string::npos);
  size_t at = ev.out.find("eval,perplexity,");
  REQUIRE(at != std::string::npos);
  double ppl = std::stod(ev.out.substr(at + 16));
  CHECK(ppl > 1.0);
  CHECK(ppl < 100000.0);
}

TEST_CASE("identical invocations produce byte-identical artifacts") {
  std::string ck1 = (work_dir() / "det1.bin").string();
  std::string ck2 = (work_dir() / "det2.bin").string();
  std::vector<std::string> base{"train",  "--corpus", mixed_corpus(), "--steps",        "5",
                                "--warmup", "1",      "--dim",        "32",             "--senses",
                                "2",      "--layers", "1",            "--heads",        "2",
                                "--seq-len", "32",    "--batch-tokens", "128",          "--seed",
                                "42"};
  auto args1 = base;
  args1.push_back("--out");
  args1.push_back(ck1);
  auto args2 = base;
  args2.push_back("--out");
  args2.push_back(ck2);
  CliRun r1 = run(args1);
  CliRun r2 = run(args2);
  REQUIRE(r1.exit_code == 0);
  REQUIRE(r2.exit_code == 0);
  CHECK(slurp(ck1) == slurp(ck2));

  CliRun g1 = run({"generate", "--checkpoint", mixed_checkpoint(), "--prompt", "the", "--max-new",
                   "8", "--seed", "21"});
  CliRun g2 = run({"generate", "--checkpoint", mixed_checkpoint(), "--prompt", "the", "--max-new",
                   "8", "--seed", "21"});
  REQUIRE(g1.exit_code == 0);
  CHECK(g1.out == g2.out);
}

TEST_CASE("strength-zero topic steering generates the same text as sampling") {
  CliRun plain = run({"generate", "--checkpoint", mixed_checkpoint(), "--prompt", "the",
                      "--max-new", "10", "--seed", "33"});
  CliRun steered = run({"topic", "--checkpoint", mixed_checkpoint(), "--bag-words", "the",
                        "--strength", "0", "--prompt", "the", "--max-new", "10", "--seed", "33"});
  REQUIRE(plain.exit_code == 0);
  REQUIRE(steered.exit_code == 0);
  std::string plain_text = quoted_field(lines_of(plain.out).back());
  std::string steered_text = quoted_field(lines_of(steered.out).back());
  CHECK(plain_text == steered_text);

  CliRun multi = run({"topic", "--checkpoint", mixed_checkpoint(), "--bag-words", "the",
                      "--strength", "3", "--max-new", "4", "--samples", "3", "--seed", "9"});
  REQUIRE(multi.exit_code == 0);
  auto rows = lines_of(multi.out);
  int data_rows = 0;
  for (const auto& l : rows)
    if (l.rfind("3,", 0) == 0) ++data_rows;
  CHECK(data_rows == 3);

  CHECK(run({"topic", "--checkpoint", mixed_checkpoint(), "--bag-words", "the", "--strength",
             "7", "--max-new", "2"})
            .exit_code == 1);
  CHECK(run({"topic", "--checkpoint", mixed_checkpoint(), "--strength", "1", "--max-new", "2"})
            .exit_code == 1);  // neither --bag nor --bag-words
}

TEST_CASE("sense projection tables are sorted and sized as requested") {
  CliRun r = run({"senses", "--checkpoint", mixed_checkpoint(), "--word", "the", "--sense", "1",
                  "--top", "4", "--bottom", "2"});
  REQUIRE(r.exit_code == 0);
  auto rows = lines_of(r.out);
  std::vector<double> top_scores;
  int bottom = 0;
  for (const auto& l : rows) {
    if (l.rfind("top,", 0) == 0) {
      size_t comma = l.rfind(',');
      top_scores.push_back(std::stod(l.substr(comma + 1)));
    }
    if (l.rfind("bottom,", 0) == 0) ++bottom;
  }
  REQUIRE(top_scores.size() == 4);
  CHECK(bottom == 2);
  for (size_t i = 1; i < top_scores.size(); ++i) CHECK(top_scores[i - 1] >= top_scores[i]);

  CHECK(run({"senses", "--checkpoint", mixed_checkpoint(), "--word", "notaword", "--sense", "0"})
            .exit_code == 2);
  CHECK(run({"senses", "--checkpoint", mixed_checkpoint(), "--word", "the", "--sense", "9"})
            .exit_code == 2);
}

TEST_CASE("wordsim reports one row per method") {
  fs::path tsv = work_dir() / "pairs.tsv";
  {
    std::ofstream os(tsv);
    os << "word1\tword2\tscore\n";
    os << "the\the\t5.0\n";
    os << "she\twas\t3.2\n";
    os << "and\tthen\t8.1\n";
    os << "he\tshe\t7.4\n";
  }
  CliRun r = run({"wordsim", "--checkpoint", mixed_checkpoint(), "--dataset", tsv.string()});
  REQUIRE(r.exit_code == 0);
  auto rows = lines_of(r.out);
  int data_rows = 0;
  bool saw_header = false;
  for (const auto& l : rows) {
    if (l == "dataset,method,rho,coverage") saw_header = true;
    if (l.rfind("pairs,", 0) == 0) ++data_rows;
  }
  CHECK(saw_header);
  CHECK(data_rows == 4);  // sense0, sense1, min, embedding

  CliRun one = run({"wordsim", "--checkpoint", mixed_checkpoint(), "--dataset", tsv.string(),
                    "--method", "sense1", "--oov", "skip"});
  REQUIRE(one.exit_code == 0);
  CHECK(one.out.find("sense1/skip") != std::string::npos);
  CHECK(run({"wordsim", "--checkpoint", mixed_checkpoint(), "--dataset", tsv.string(),
             "--method", "sense9"})
            .exit_code == 1);
}

TEST_CASE("debias finds a sense and never worsens the estimation ratio") {
  CliRun r = run({"debias", "--checkpoint", pronoun_checkpoint(), "--auto", "--profession",
                  "nurse"});
  REQUIRE(r.exit_code == 0);
  REQUIRE(r.out.find("debias,bias_sense,") != std::string::npos);
  auto rows = lines_of(r.out);
  std::string data;
  for (const auto& l : rows)
    if (l.rfind("\"nurse\",", 0) == 0) data = l;
  REQUIRE(!data.empty());
  // columns: profession,sense,factor,estimation_before,estimation_after,...
  std::vector<std::string> cols;
  std::istringstream ss(data);
  std::string c;
  while (std::getline(ss, c, ',')) cols.push_back(c);
  REQUIRE(cols.size() == 7);
  CHECK(std::stod(cols[4]) <= std::stod(cols[3]) + 1e-12);

  CliRun manual = run({"debias", "--checkpoint", pronoun_checkpoint(), "--profession", "nurse",
                       "--sense", "0", "--factor", "1"});
  REQUIRE(manual.exit_code == 0);
  auto mrows = lines_of(manual.out);
  std::string mdata = mrows.back();
  std::vector<std::string> mcols;
  std::istringstream ms(mdata);
  while (std::getline(ms, c, ',')) mcols.push_back(c);
  REQUIRE(mcols.size() == 5);
  CHECK(mcols[3] == mcols[4]);  // factor 1 leaves the ratio untouched

  CliRun base = run({"debias", "--checkpoint", pronoun_checkpoint(), "--baseline",
                     "--profession", "nurse", "--fraction", "0"});
  REQUIRE(base.exit_code == 0);
  auto brow = lines_of(base.out).back();
  std::vector<std::string> bcols;
  std::istringstream bs(brow);
  while (std::getline(bs, c, ',')) bcols.push_back(c);
  REQUIRE(bcols.size() == 5);
  CHECK(bcols[3] == bcols[4]);  // fraction 0 is the identity

  CHECK(run({"debias", "--checkpoint", pronoun_checkpoint(), "--profession", "zzzz", "--sense",
             "0", "--factor", "1"})
            .exit_code == 2);
}

TEST_CASE("knowledge edits report per-sense projections") {
  CliRun r = run({"edit", "--checkpoint", pronoun_checkpoint(), "--target", "nurse", "--removed",
                  "he", "--added", "she", "--mode", "faithful"});
  REQUIRE(r.exit_code == 0);
  auto rows = lines_of(r.out);
  int data_rows = 0;
  bool header = false;
  for (const auto& l : rows) {
    if (l == "sense,removed_before,removed_after,added_before,added_after") header = true;
    if (!l.empty() && std::isdigit(static_cast<unsigned char>(l[0])) && l.find(',') != std::string::npos)
      ++data_rows;
  }
  CHECK(header);
  CHECK(data_rows == 2);  // one row per sense

  CliRun removal = run({"edit", "--checkpoint", pronoun_checkpoint(), "--target", "nurse",
                        "--removed", "he"});
  REQUIRE(removal.exit_code == 0);
  // corrected removal-only edits zero the projection on the removed word
  for (const auto& l : lines_of(removal.out)) {
    if (l.empty() || !std::isdigit(static_cast<unsigned char>(l[0]))) continue;
    size_t comma = l.rfind(',');
    CHECK(std::fabs(std::stod(l.substr(comma + 1))) < 1e-9);
  }
  CHECK(run({"edit", "--checkpoint", pronoun_checkpoint(), "--target", "nurse", "--removed",
             "he", "--added", "he"})
            .exit_code == 1);  // adding what is being removed is rejected as usage
  CHECK(run({"edit", "--checkpoint", pronoun_checkpoint(), "--target", "nurse", "--removed",
             "he", "--mode", "sideways"})
            .exit_code == 1);
}

TEST_CASE("verify command runs the whole invariant suite") {
  CliRun r = run({"verify"});
  REQUIRE(r.exit_code == 0);
  auto rows = lines_of(r.out);
  int ok_rows = 0;
  for (const auto& l : rows)
    if (l.rfind("verify,", 0) == 0) {
      CHECK(l.find(",ok,") != std::string::npos);
      ++ok_rows;
    }
  CHECK(ok_rows == 7);
}
