#include "fusionkit/tsv.hpp"

#include "fusionkit/common.hpp"

#include <fstream>
#include <sstream>

namespace fusionkit {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t begin = 0;
  while (true) {
    const std::size_t tab = line.find('\t', begin);
    if (tab == std::string::npos) {
      fields.push_back(line.substr(begin));
      break;
    }
    fields.push_back(line.substr(begin, tab - begin));
    begin = tab + 1;
  }
  return fields;
}

std::string trim(const std::string& s) {
  const std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) {
    return "";
  }
  const std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<Utterance> load_transcripts(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("cannot open transcript file: " + path);
  }
  std::vector<Utterance> utts;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty()) {
      continue;
    }
    std::vector<std::string> fields = split_tabs(line);
    if (line_no == 1 && !fields.empty() && fields[0] == "id") {
      continue;  // header row
    }
    if (fields.size() != 5) {
      throw ValidationError(path + " line " + std::to_string(line_no) +
                            ": expected 5 tab-separated fields (id, mission, channel, seen, text)");
    }
    Utterance u;
    u.id = trim(fields[0]);
    u.mission = trim(fields[1]);
    u.channel = trim(fields[2]);
    const std::string seen = trim(fields[3]);
    if (seen == "0") {
      u.seen = false;
    } else if (seen == "1") {
      u.seen = true;
    } else {
      throw ValidationError(path + " line " + std::to_string(line_no) +
                            ": seen must be 0 or 1, got '" + seen + "'");
    }
    if (u.id.empty()) {
      throw ValidationError(path + " line " + std::to_string(line_no) + ": empty id");
    }
    u.words = normalize_words(fields[4]);
    utts.push_back(std::move(u));
  }
  return utts;
}

std::map<std::string, std::string> load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("cannot open config file: " + path);
  }
  std::map<std::string, std::string> cfg;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) {
      line = line.substr(0, hash);
    }
    const std::string trimmed = trim(line);
    if (trimmed.empty()) {
      continue;
    }
    const std::size_t eq = trimmed.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ValidationError(path + " line " + std::to_string(line_no) +
                            ": expected key=value");
    }
    const std::string key = trim(trimmed.substr(0, eq));
    const std::string value = trim(trimmed.substr(eq + 1));
    if (cfg.count(key) != 0) {
      throw ValidationError(path + " line " + std::to_string(line_no) +
                            ": duplicate key " + key);
    }
    cfg[key] = value;
  }
  return cfg;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ValidationError("cannot open file: " + path);
  }
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw ValidationError("cannot write file: " + path);
  }
  out << content;
  if (!out) {
    throw ValidationError("write failed: " + path);
  }
}

}  // namespace fusionkit
