// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "dam/error.hpp"
#include "dam/tasks.hpp"

namespace dam {

namespace fs = std::filesystem;

namespace {

struct RawSample {
  int task = 0;
  std::vector<std::string> tokens;
  std::vector<std::string> answers;
};

int task_number(const std::string& filename) {
  // qa<N>_<name>_<split>.txt
  if (filename.rfind("qa", 0) != 0) return 0;
  std::size_t i = 2;
  int n = 0;
  while (i < filename.size() && std::isdigit(static_cast<unsigned char>(filename[i]))) {
    n = n * 10 + (filename[i] - '0');
    ++i;
  }
  return n;
}

std::vector<RawSample> read_split(const fs::path& file, int task) {
  std::ifstream in(file);
  if (!in) throw FormatError("cannot open " + file.string());
  std::vector<RawSample> samples;
  RawSample current;
  current.task = task;
  auto flush = [&] {
    if (!current.answers.empty()) samples.push_back(std::move(current));
    current = RawSample{};
    current.task = task;
  };
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t pos = 0;
    int id = 0;
    while (pos < line.size() && std::isdigit(static_cast<unsigned char>(line[pos]))) {
      id = id * 10 + (line[pos] - '0');
      ++pos;
    }
    if (id == 1) flush();
    const std::string body = line.substr(pos);
    const std::size_t tab = body.find('\t');
    if (tab == std::string::npos) {
      for (auto& w : babi_tokenize(body)) current.tokens.push_back(std::move(w));
      continue;
    }
    for (auto& w : babi_tokenize(body.substr(0, tab))) current.tokens.push_back(std::move(w));
    const std::size_t tab2 = body.find('\t', tab + 1);
    const std::string answer = body.substr(tab + 1, tab2 == std::string::npos ? std::string::npos : tab2 - tab - 1);
    for (auto& w : babi_tokenize(answer)) {
      if (w == "." || w == "?") continue;
      current.tokens.push_back("-");
      current.answers.push_back(std::move(w));
    }
  }
  flush();
  return samples;
}

}  // namespace

std::vector<std::string> babi_tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string word;
  auto emit = [&] {
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalpha(c)) {
      word.push_back(static_cast<char>(std::tolower(c)));
    } else if (ch == '.' || ch == '?') {
      emit();
      out.emplace_back(1, ch);
    } else {
      emit();  // whitespace, digits and other punctuation separate words
    }
  }
  emit();
  return out;
}

std::optional<fs::path> find_babi_dir(const fs::path& root) {
  if (root.empty() || !fs::exists(root)) return std::nullopt;
  const fs::path candidates[] = {root, root / "en-10k", root / "tasks_1-20_v1-2" / "en-10k"};
  for (const auto& dir : candidates) {
    if (fs::is_directory(dir) && fs::exists(dir / "qa1_single-supporting-fact_train.txt")) return dir;
  }
  return std::nullopt;
}

BabiCorpus load_babi(const fs::path& dir, const BabiOptions& options) {
  if (!fs::is_directory(dir)) throw FormatError("bAbI directory not found: " + dir.string());
  std::vector<RawSample> train, test;
  std::set<int> tasks_seen;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) files.push_back(entry.path());
  // Numeric task order, so qa2 precedes qa10.
  std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
    const int ta = task_number(a.filename().string()), tb = task_number(b.filename().string());
    return ta != tb ? ta < tb : a < b;
  });
  for (const auto& file : files) {
    const std::string name = file.filename().string();
    const int task = task_number(name);
    if (task < 1 || task > 20 || file.extension() != ".txt") continue;
    const bool is_train = name.ends_with("_train.txt");
    const bool is_test = name.ends_with("_test.txt");
    if (!is_train && !is_test) continue;
    auto samples = read_split(file, task);
    auto& dst = is_train ? train : test;
    dst.insert(dst.end(), std::make_move_iterator(samples.begin()), std::make_move_iterator(samples.end()));
    tasks_seen.insert(task);
  }
  if (train.empty() || test.empty()) throw FormatError("no bAbI train/test files under " + dir.string());

  auto too_long = [&](const RawSample& s) { return s.tokens.size() > options.max_words; };
  std::erase_if(train, too_long);
  std::erase_if(test, too_long);

  std::set<std::string> words;
  for (const auto* split : {&train, &test}) {
    for (const auto& s : *split) {
      for (const auto& w : s.tokens) words.insert(w);
      for (const auto& w : s.answers) words.insert(w);
    }
  }
  for (const char* sym : kBabiSymbols) words.erase(sym);
  if (options.expected_words != 0 && words.size() != options.expected_words) {
    throw FormatError("bAbI vocabulary mismatch: found " + std::to_string(words.size()) +
                      " words, expected " + std::to_string(options.expected_words));
  }

  BabiCorpus corpus;
  for (const char* sym : kBabiSymbols) corpus.words.emplace_back(sym);
  corpus.words.insert(corpus.words.end(), words.begin(), words.end());
  for (std::size_t i = 0; i < corpus.words.size(); ++i) corpus.ids[corpus.words[i]] = i;

  auto convert = [&corpus](const std::vector<RawSample>& raw, std::vector<BabiSample>& out) {
    out.reserve(raw.size());
    for (const auto& r : raw) {
      BabiSample s;
      s.task = r.task;
      for (const auto& w : r.tokens) s.tokens.push_back(corpus.ids.at(w));
      for (const auto& w : r.answers) s.answers.push_back(corpus.ids.at(w));
      out.push_back(std::move(s));
    }
  };
  convert(train, corpus.train);
  convert(test, corpus.test);
  return corpus;
}

Episode babi_episode(const BabiSample& sample, const BabiCorpus& corpus, bool skip_pad) {
  const std::size_t T = sample.tokens.size();
  Episode ep = Episode::blank(T, 1, corpus.vocab_size());
  std::size_t next_answer = 0;
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t id = sample.tokens[t];
    ep.in(t, 0) = static_cast<double>(id);
    if (id == corpus.dash_id()) {
      if (next_answer >= sample.answers.size()) throw FormatError("bAbI sample has more '-' than answers");
      ep.out(t, sample.answers[next_answer++]) = 1.0;
      ep.mask.answer[t] = 1;
    } else if (!(skip_pad && id == corpus.pad_id())) {
      ep.mask.story[t] = 1;
    }
  }
  return ep;
}

}  // namespace dam
