#include "ragdesk/ingest.hpp"

namespace ragdesk::ingest {

namespace {

// Common English function words. The list is fixed: keyword enrichment,
// reranking and the faithfulness metric all depend on it.
constexpr const char* kStopwords[] = {
    "a",       "about",   "above",  "after",   "again",   "against", "all",     "am",
    "an",      "and",     "any",    "are",     "as",      "at",      "be",      "because",
    "been",    "before",  "being",  "below",   "between", "both",    "but",     "by",
    "can",     "could",   "did",    "do",      "does",    "doing",   "down",    "during",
    "each",    "few",     "for",    "from",    "further", "had",     "has",     "have",
    "having",  "he",      "her",    "here",    "hers",    "herself", "him",     "himself",
    "his",     "how",     "i",      "if",      "in",      "into",    "is",      "it",
    "its",     "itself",  "just",   "me",      "more",    "most",    "my",      "myself",
    "no",      "nor",     "not",    "now",     "of",      "off",     "on",      "once",
    "only",    "or",      "other",  "our",     "ours",    "ourselves", "out",   "over",
    "own",     "same",    "she",    "should",  "so",      "some",    "such",    "than",
    "that",    "the",     "their",  "theirs",  "them",    "themselves", "then", "there",
    "these",   "they",    "this",   "those",   "through", "to",      "too",     "under",
    "until",   "up",      "very",   "was",     "we",      "were",    "what",    "when",
    "where",   "which",   "while",  "who",     "whom",    "why",     "will",    "with",
    "would",   "you",     "your",   "yours",   "yourself", "yourselves",
};

}  // namespace

const std::set<std::string, std::less<>>& stopwords() {
    static const std::set<std::string, std::less<>> words(std::begin(kStopwords),
                                                          std::end(kStopwords));
    return words;
}

bool is_stopword(std::string_view token) {
    const auto& words = stopwords();
    return words.find(token) != words.end();
}

}  // namespace ragdesk::ingest
