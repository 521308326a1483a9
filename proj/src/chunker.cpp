#include <cctype>
#include <set>
#include <string>
#include <vector>

#include "lakeqa/providers.hpp"
#include "lakeqa/text.hpp"

namespace lakeqa {

namespace {

enum class Tag { wh, det, aux, prep, conj, pron, many, agg, comp, than, temporal, adv, verb, num, content };

struct Token {
  std::string lower;
  std::size_t begin;
  std::size_t end;
  Tag tag = Tag::content;
  bool participle = false;
};

using WordSet = std::set<std::string, std::less<>>;

const WordSet kWh = {"what", "which", "who", "whom", "whose", "where", "when", "why", "how"};
const WordSet kDet = {"the", "a", "an", "this", "that", "these", "those", "each", "every", "all",
                      "any", "its", "their", "his", "her", "our", "my", "your", "some", "no"};
const WordSet kAux = {"is",  "are",   "was",   "were",   "be",    "been", "being", "do",  "does", "did",
                      "has", "have",  "had",   "will",   "would", "can",  "could", "should",
                      "shall", "may", "might", "must",   "there"};
const WordSet kPrep = {"of",   "in",     "on",     "at",      "for",    "with",   "by",
                       "from", "to",     "among",  "between", "into",   "per",    "as",
                       "about", "within", "during", "across", "through", "via",   "whose"};
const WordSet kConj = {"and", "or", "but", "nor"};
const WordSet kPron = {"it", "they", "them", "he", "she", "we", "you", "i", "one", "ones"};
const WordSet kMany = {"many", "much"};
const WordSet kAgg = {"total",   "average", "mean",    "sum",    "count",    "number",  "maximum",
                      "minimum", "max",     "min",     "highest", "lowest",  "largest", "smallest",
                      "greatest"};
const WordSet kComp = {"over",   "above", "below",  "under",  "exceeding", "beyond", "more",
                       "less",   "greater", "fewer", "higher", "lower",    "least",  "most",
                       "larger", "smaller", "older", "younger"};
const WordSet kTemporal = {"after", "before", "since", "until"};
const WordSet kVerbs = {"list",    "show",    "give",     "find",     "tell",    "opened",  "open",
                        "enrolled", "enroll", "won",      "win",      "received", "receive", "stayed",
                        "stay",    "born",    "own",      "owns",     "owned",   "live",    "lived",
                        "lives",   "work",    "worked",   "works",    "contain", "contains", "include",
                        "includes", "belong", "belongs",  "make",     "made",    "take",    "took",
                        "get",     "got",     "earn",     "earned",   "earns",   "hold",    "holds",
                        "held",    "publish", "published", "teach",   "taught",  "sell",    "sold",
                        "buy",     "bought",  "located",  "based",    "attend",  "attended", "attends"};
const WordSet kNotAdverb = {"family", "monthly", "weekly",  "daily",  "yearly",  "quarterly", "italy",
                            "supply", "assembly", "july",   "reply",  "ally",    "rally",     "anomaly",
                            "butterfly", "early", "only"};
const WordSet kNotVerb = {"need", "speed", "seed", "bed", "red", "feed", "bred", "shed", "breed", "united",
                          "limited"};

bool is_number_token(const std::string& s) {
  bool digit = false;
  for (char c : s) {
    if (std::isdigit(static_cast<unsigned char>(c)))
      digit = true;
    else if (c != '.' && c != '-' && c != ',')
      return false;
  }
  return digit;
}

std::vector<Token> tokenize(std::string_view s) {
  std::vector<Token> out;
  std::size_t i = 0;
  auto word = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
  while (i < s.size()) {
    if (!word(s[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < s.size()) {
      if (word(s[j])) {
        ++j;
      } else if ((s[j] == '-' || s[j] == '\'' || s[j] == '.') && j + 1 < s.size() && word(s[j + 1]) &&
                 (s[j] != '.' || (std::isdigit(static_cast<unsigned char>(s[j - 1])) &&
                                  std::isdigit(static_cast<unsigned char>(s[j + 1]))))) {
        ++j;
      } else {
        break;
      }
    }
    out.push_back({to_lower(s.substr(i, j - i)), i, j});
    i = j;
  }
  return out;
}

void tag(std::vector<Token>& toks) {
  for (std::size_t i = 0; i < toks.size(); ++i) {
    auto& t = toks[i];
    const std::string& w = t.lower;
    const bool hyphenated = w.find('-') != std::string::npos;
    const std::string last = hyphenated ? w.substr(w.rfind('-') + 1) : w;
    if (is_number_token(w)) t.tag = Tag::num;
    else if (kWh.contains(w)) t.tag = Tag::wh;
    else if (kDet.contains(w)) t.tag = Tag::det;
    else if (kAux.contains(w)) t.tag = Tag::aux;
    else if (kPrep.contains(w)) t.tag = Tag::prep;
    else if (kConj.contains(w)) t.tag = Tag::conj;
    else if (kPron.contains(w)) t.tag = Tag::pron;
    else if (kMany.contains(w)) t.tag = Tag::many;
    else if (w == "than") t.tag = Tag::than;
    else if (kComp.contains(w)) t.tag = Tag::comp;
    else if (kTemporal.contains(w)) t.tag = Tag::temporal;
    else if (kAgg.contains(w)) t.tag = Tag::agg;
    else if (kVerbs.contains(w)) t.tag = Tag::verb;
    else if (w.size() > 4 && w.ends_with("ly") && !kNotAdverb.contains(w) && !hyphenated) t.tag = Tag::adv;
    else if (hyphenated && last.size() > 3 && last.ends_with("ed")) {
      t.tag = Tag::content;
      t.participle = true;
    } else if (!hyphenated && w.size() > 4 && w.ends_with("ed") && !kNotVerb.contains(w))
      t.tag = Tag::verb;
    else t.tag = Tag::content;
  }
  // "at least" / "at most": the preposition belongs to the comparative
  for (std::size_t i = 0; i + 1 < toks.size(); ++i)
    if (toks[i].lower == "at" && (toks[i + 1].lower == "least" || toks[i + 1].lower == "most"))
      toks[i].tag = Tag::comp;
  // "count"/"number" directly after a content word is part of a compound ("citation count")
  for (std::size_t i = 1; i < toks.size(); ++i)
    if (toks[i].tag == Tag::agg && toks[i - 1].tag == Tag::content &&
        (toks[i].lower == "count" || toks[i].lower == "number"))
      toks[i].tag = Tag::content;
}

bool np_token(const Token& t) { return t.tag == Tag::content || t.tag == Tag::num; }

/// Length of a comparative operator starting at i ("over", "more than", "at least"), 0 if none.
std::size_t comparative_len(const std::vector<Token>& toks, std::size_t i) {
  if (i >= toks.size() || toks[i].tag != Tag::comp) return 0;
  std::size_t j = i + 1;
  if (toks[i].lower == "at" && j < toks.size() && (toks[j].lower == "least" || toks[j].lower == "most")) ++j;
  if (j < toks.size() && toks[j].tag == Tag::than) ++j;
  return j - i;
}

}  // namespace

std::vector<Phrase> RuleChunker::chunk(std::string_view sentence) const {
  auto toks = tokenize(sentence);
  tag(toks);
  std::vector<Phrase> out;
  auto emit = [&](std::size_t from, std::size_t to, PhraseKind kind) {  // token range [from, to)
    const std::size_t b = toks[from].begin, e = toks[to - 1].end;
    out.push_back({std::string(sentence.substr(b, e - b)), kind, b, e});
  };
  // Extends a phrase ending before token j with "<comparative> <number> [noun run]".
  // A linking "of" is absorbed: "a floor of at least 5".
  auto comparison_tail = [&](std::size_t j) -> std::size_t {
    const std::size_t from = j < toks.size() && toks[j].lower == "of" ? j + 1 : j;
    std::size_t c = comparative_len(toks, from);
    if (c == 0 || from + c >= toks.size() || toks[from + c].tag != Tag::num) return j;
    return from + c + 1;
  };

  std::size_t i = 0;
  const std::size_t n = toks.size();
  while (i < n) {
    const Token& t = toks[i];
    switch (t.tag) {
      case Tag::wh:
        if (t.lower == "how" && i + 1 < n && toks[i + 1].tag == Tag::many) ++i;
        ++i;
        break;
      case Tag::agg: {
        emit(i, i + 1, PhraseKind::noun);
        ++i;
        break;
      }
      case Tag::temporal: {
        std::size_t j = i + 1;
        while (j < n && np_token(toks[j])) ++j;
        if (j > i + 1) {
          emit(i, j, PhraseKind::verb);
          i = j;
        } else {
          ++i;
        }
        break;
      }
      case Tag::comp: {
        std::size_t j = comparison_tail(i);
        if (j > i) {
          while (j < n && toks[j].tag == Tag::content) ++j;
          emit(i, j, PhraseKind::adjective);
          i = j;
        } else {
          ++i;
        }
        break;
      }
      case Tag::adv: {
        std::size_t j = i + 1;
        while (j < n && (toks[j].tag == Tag::adv)) ++j;
        std::size_t k = j;
        while (k < n && (np_token(toks[k]) || toks[k].tag == Tag::verb)) ++k;
        if (k > j) {
          const bool verbal = toks[j].tag == Tag::verb;
          emit(i, k, verbal ? PhraseKind::verb : PhraseKind::adjective);
          i = k;
        } else {
          i = j;
        }
        break;
      }
      case Tag::verb: {
        std::size_t j = i + 1;
        if (j < n && toks[j].tag == Tag::temporal && j + 1 < n && np_token(toks[j + 1])) {
          j += 2;
          while (j < n && np_token(toks[j])) ++j;
        } else {
          j = comparison_tail(j);
        }
        emit(i, j, PhraseKind::verb);
        i = j;
        break;
      }
      case Tag::content:
      case Tag::num: {
        std::size_t j = i;
        while (j < n && np_token(toks[j])) ++j;
        std::size_t k = comparison_tail(j);
        emit(i, k, k > j ? PhraseKind::adjective : PhraseKind::noun);
        i = k;
        break;
      }
      default:
        ++i;
        break;
    }
  }
  if (out.empty()) {
    std::string_view body = trim(sentence);
    const std::size_t b = static_cast<std::size_t>(body.data() - sentence.data());
    out.push_back({std::string(body), PhraseKind::noun, b, b + body.size()});
  }
  return out;
}

}  // namespace lakeqa
