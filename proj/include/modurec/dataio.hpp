#pragma once

// MovieLens ingestion: raw-file parsers, side-feature encoding and the
// train / holdout / test split machinery.

#include "modurec/common.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace modurec {

struct RatingEvent {
    std::int32_t user = 0;  // dense index in [0, M)
    std::int32_t item = 0;  // dense index in [0, N)
    double rating = 0.0;
    std::int64_t timestamp = 0;

    friend bool operator==(const RatingEvent&, const RatingEvent&) = default;
};

/// Bijection between raw MovieLens ids and dense indices.
class IndexMap {
public:
    IndexMap() = default;

    /// Builds the map from raw ids; indices follow ascending raw id.
    explicit IndexMap(std::vector<std::int64_t> raw_ids) : raw_(std::move(raw_ids)) {
        std::sort(raw_.begin(), raw_.end());
        raw_.erase(std::unique(raw_.begin(), raw_.end()), raw_.end());
        for (std::size_t i = 0; i < raw_.size(); ++i) {
            index_.emplace(raw_[i], static_cast<std::int32_t>(i));
        }
    }

    std::size_t size() const { return raw_.size(); }
    bool contains(std::int64_t raw) const { return index_.count(raw) != 0; }

    std::int32_t index(std::int64_t raw) const {
        auto it = index_.find(raw);
        if (it == index_.end()) {
            throw IndexError("unknown id " + std::to_string(raw));
        }
        return it->second;
    }
    std::int64_t raw(std::int32_t index) const { return raw_.at(static_cast<std::size_t>(index)); }
    const std::vector<std::int64_t>& raw_ids() const { return raw_; }

    friend bool operator==(const IndexMap& a, const IndexMap& b) { return a.raw_ == b.raw_; }

private:
    std::vector<std::int64_t> raw_;
    std::unordered_map<std::int64_t, std::int32_t> index_;
};

struct RatingDataset {
    std::vector<RatingEvent> events;
    IndexMap users;
    IndexMap items;

    std::int32_t num_users() const { return static_cast<std::int32_t>(users.size()); }
    std::int32_t num_items() const { return static_cast<std::int32_t>(items.size()); }
    std::size_t size() const { return events.size(); }
    bool empty() const { return events.empty(); }

    /// Same index maps, different event list.
    RatingDataset with_events(std::vector<RatingEvent> ev) const {
        RatingDataset out{std::move(ev), users, items};
        return out;
    }
};

struct FeatureMatrices {
    Matrix<double> user;  // M x d_u
    Matrix<double> item;  // N x d_i
    std::vector<std::string> user_names;
    std::vector<std::string> item_names;

    /// Column ranges [begin, end) of one-hot blocks in the user matrix.
    /// Item genre blocks are multi-hot and not listed.
    std::vector<std::pair<int, int>> user_onehot_blocks;
};

struct SplitBundle {
    RatingDataset train;
    RatingDataset holdout;
    RatingDataset test;
    CountVector user_train_counts;
    CountVector item_train_counts;
};

namespace detail {

inline std::vector<std::string_view> split(std::string_view line, std::string_view sep) {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (true) {
        const std::size_t next = line.find(sep, pos);
        if (next == std::string_view::npos) {
            out.push_back(line.substr(pos));
            return out;
        }
        out.push_back(line.substr(pos, next - pos));
        pos = next + sep.size();
    }
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\n')) s.remove_suffix(1);
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    return s;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
    s = trim(s);
    if (s.empty()) return false;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

inline std::ifstream open(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open " + path);
    }
    return in;
}

/// Calls fn(line_number, line) for every non-blank line.
template <typename Fn>
void for_each_line(const std::string& path, Fn&& fn) {
    auto in = open(path);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (trim(line).empty()) continue;
        fn(n, trim(line));
    }
}

struct RawRating {
    std::int64_t user;
    std::int64_t item;
    double rating;
    std::int64_t timestamp;
};

inline RawRating parse_rating_fields(const std::vector<std::string_view>& f, const std::string& path,
                                     std::size_t line) {
    if (f.size() != 4) {
        throw ParseError(path, line, "expected 4 fields, got " + std::to_string(f.size()));
    }
    RawRating r{};
    int rating = 0;
    if (!parse_number(f[0], r.user) || !parse_number(f[1], r.item) || !parse_number(f[2], rating) ||
        !parse_number(f[3], r.timestamp)) {
        throw ParseError(path, line, "non-numeric field");
    }
    if (rating < 1 || rating > 5) {
        throw ParseError(path, line, "rating out of range: " + std::to_string(rating));
    }
    if (r.timestamp <= 0) {
        throw ParseError(path, line, "non-positive timestamp");
    }
    r.rating = rating;
    return r;
}

inline std::vector<RawRating> read_ratings(const std::string& path, std::string_view sep) {
    std::vector<RawRating> out;
    for_each_line(path, [&](std::size_t n, std::string_view line) {
        out.push_back(parse_rating_fields(split(line, sep), path, n));
    });
    if (out.empty()) {
        throw Error(path + ": no rating events");
    }
    return out;
}

/// Maps raw ratings onto dense indices. A repeated (user, item) pair keeps
/// the event with the latest timestamp; the survivor stays at the position
/// of the first occurrence.
inline std::vector<RatingEvent> index_ratings(const std::vector<RawRating>& raw, const IndexMap& users,
                                              const IndexMap& items) {
    std::vector<RatingEvent> events;
    events.reserve(raw.size());
    std::unordered_map<std::int64_t, std::size_t> seen;
    const auto n_items = static_cast<std::int64_t>(items.size());
    for (const auto& r : raw) {
        RatingEvent e{users.index(r.user), items.index(r.item), r.rating, r.timestamp};
        const std::int64_t key = static_cast<std::int64_t>(e.user) * n_items + e.item;
        auto [it, inserted] = seen.emplace(key, events.size());
        if (inserted) {
            events.push_back(e);
        } else if (e.timestamp >= events[it->second].timestamp) {
            events[it->second] = e;
        }
    }
    return events;
}

inline void minmax_normalize(Matrix<double>& m, int col, const std::vector<bool>& present) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        if (!present[static_cast<std::size_t>(r)]) continue;
        lo = std::min(lo, m(r, col));
        hi = std::max(hi, m(r, col));
    }
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        if (!present[static_cast<std::size_t>(r)] || hi <= lo) {
            m(r, col) = 0.0;
        } else {
            m(r, col) = (m(r, col) - lo) / (hi - lo);
        }
    }
}

// "01-Jan-1995" -> 1995
inline bool release_year(std::string_view date, int& year) {
    date = trim(date);
    if (date.size() < 4) return false;
    return parse_number(date.substr(date.size() - 4), year);
}

// "Toy Story (1995)" -> 1995
inline bool title_year(std::string_view title, int& year) {
    title = trim(title);
    if (title.size() < 6 || title.back() != ')') return false;
    const auto open = title.rfind('(');
    if (open == std::string_view::npos) return false;
    return parse_number(title.substr(open + 1, title.size() - open - 2), year);
}

inline std::vector<std::int64_t> first_column_ids(const std::string& path, std::string_view sep) {
    std::vector<std::int64_t> ids;
    for_each_line(path, [&](std::size_t n, std::string_view line) {
        std::int64_t id = 0;
        if (!parse_number(split(line, sep)[0], id)) {
            throw ParseError(path, n, "bad id");
        }
        ids.push_back(id);
    });
    return ids;
}

}  // namespace detail

inline const std::vector<std::string>& ml100k_occupations() {
    static const std::vector<std::string> v{
        "administrator", "artist",    "doctor",     "educator",   "engineer",  "entertainment",
        "executive",     "healthcare", "homemaker", "lawyer",     "librarian", "marketing",
        "none",          "other",     "programmer", "retired",    "salesman",  "scientist",
        "student",       "technician", "writer"};
    return v;
}

inline const std::vector<std::string>& ml1m_genres() {
    static const std::vector<std::string> v{
        "Action",  "Adventure", "Animation", "Children's", "Comedy",  "Crime",
        "Documentary", "Drama", "Fantasy",   "Film-Noir",  "Horror",  "Musical",
        "Mystery", "Romance",   "Sci-Fi",    "Thriller",   "War",     "Western"};
    return v;
}

inline const std::vector<int>& ml1m_age_buckets() {
    static const std::vector<int> v{1, 18, 25, 35, 45, 50, 56};
    return v;
}

/// Parses the MovieLens 100K layout: tab-separated u.data, pipe-separated
/// u.user (id|age|gender|occupation|zip) and u.item (id|title|release|video
/// release|url|19 genre flags).
///
/// User features: age (min-max), gender one-hot, occupation one-hot.
/// Item features: 19 genre flags, release year (min-max, 0 when missing).
inline std::pair<RatingDataset, FeatureMatrices> parse_ml100k(const std::string& data_path,
                                                              const std::string& user_path,
                                                              const std::string& item_path) {
    using detail::parse_number;
    using detail::split;

    IndexMap users(detail::first_column_ids(user_path, "|"));
    IndexMap items(detail::first_column_ids(item_path, "|"));

    FeatureMatrices feats;
    const auto& occ = ml100k_occupations();
    const int d_u = 1 + 2 + static_cast<int>(occ.size());
    feats.user = Matrix<double>::Zero(static_cast<Eigen::Index>(users.size()), d_u);
    feats.user_names = {"age", "gender=M", "gender=F"};
    for (const auto& o : occ) feats.user_names.push_back("occupation=" + o);
    feats.user_onehot_blocks = {{1, 3}, {3, d_u}};
    std::vector<bool> all_users(users.size(), true);

    detail::for_each_line(user_path, [&](std::size_t n, std::string_view line) {
        const auto f = split(line, "|");
        if (f.size() != 5) throw ParseError(user_path, n, "expected 5 fields");
        std::int64_t id = 0;
        int age = 0;
        if (!parse_number(f[0], id) || !parse_number(f[1], age)) {
            throw ParseError(user_path, n, "non-numeric id or age");
        }
        const auto row = users.index(id);
        feats.user(row, 0) = age;
        const auto gender = detail::trim(f[2]);
        if (gender == "M") {
            feats.user(row, 1) = 1.0;
        } else if (gender == "F") {
            feats.user(row, 2) = 1.0;
        } else if (!gender.empty()) {
            throw ParseError(user_path, n, "unknown gender");
        }
        const auto o = detail::trim(f[3]);
        if (!o.empty()) {
            auto it = std::find(occ.begin(), occ.end(), o);
            if (it == occ.end()) throw ParseError(user_path, n, "unknown occupation");
            feats.user(row, 3 + (it - occ.begin())) = 1.0;
        }
    });
    detail::minmax_normalize(feats.user, 0, all_users);

    constexpr int kGenres = 19;
    feats.item = Matrix<double>::Zero(static_cast<Eigen::Index>(items.size()), kGenres + 1);
    for (int g = 0; g < kGenres; ++g) feats.item_names.push_back("genre" + std::to_string(g));
    feats.item_names.push_back("release_year");
    std::vector<bool> has_year(items.size(), false);

    detail::for_each_line(item_path, [&](std::size_t n, std::string_view line) {
        const auto f = split(line, "|");
        if (f.size() != 5 + kGenres) {
            throw ParseError(item_path, n, "expected 24 fields, got " + std::to_string(f.size()));
        }
        std::int64_t id = 0;
        if (!parse_number(f[0], id)) throw ParseError(item_path, n, "bad item id");
        const auto row = items.index(id);
        for (int g = 0; g < kGenres; ++g) {
            int flag = 0;
            if (!parse_number(f[5 + g], flag) || (flag != 0 && flag != 1)) {
                throw ParseError(item_path, n, "bad genre flag");
            }
            feats.item(row, g) = flag;
        }
        int year = 0;
        if (detail::release_year(f[2], year)) {
            feats.item(row, kGenres) = year;
            has_year[static_cast<std::size_t>(row)] = true;
        }
    });
    detail::minmax_normalize(feats.item, kGenres, has_year);

    const auto raw = detail::read_ratings(data_path, "\t");
    RatingDataset ds{detail::index_ratings(raw, users, items), std::move(users), std::move(items)};
    return {std::move(ds), std::move(feats)};
}

/// Parses the MovieLens 1M layout ("::"-separated ratings.dat, users.dat,
/// movies.dat). User features: gender, age bucket and occupation one-hot.
/// Item features: 18 genres multi-hot plus the year from the title.
inline std::pair<RatingDataset, FeatureMatrices> parse_ml1m(const std::string& ratings_path,
                                                            const std::string& users_path,
                                                            const std::string& movies_path) {
    using detail::parse_number;
    using detail::split;

    auto checked = [](const std::string& path, std::size_t n, std::string_view line, std::size_t fields) {
        auto f = split(line, "::");
        if (f.size() != fields) {
            throw ParseError(path, n,
                             "expected " + std::to_string(fields) + " '::'-separated fields, got " +
                                 std::to_string(f.size()));
        }
        return f;
    };

    std::vector<std::int64_t> user_ids, movie_ids;
    detail::for_each_line(users_path, [&](std::size_t n, std::string_view line) {
        std::int64_t id = 0;
        if (!parse_number(checked(users_path, n, line, 5)[0], id)) throw ParseError(users_path, n, "bad id");
        user_ids.push_back(id);
    });
    detail::for_each_line(movies_path, [&](std::size_t n, std::string_view line) {
        std::int64_t id = 0;
        if (!parse_number(checked(movies_path, n, line, 3)[0], id)) throw ParseError(movies_path, n, "bad id");
        movie_ids.push_back(id);
    });
    IndexMap users(std::move(user_ids));
    IndexMap items(std::move(movie_ids));

    FeatureMatrices feats;
    const auto& ages = ml1m_age_buckets();
    const int n_age = static_cast<int>(ages.size());
    constexpr int kOccupations = 21;
    const int d_u = 2 + n_age + kOccupations;
    feats.user = Matrix<double>::Zero(static_cast<Eigen::Index>(users.size()), d_u);
    feats.user_names = {"gender=M", "gender=F"};
    for (int a : ages) feats.user_names.push_back("age=" + std::to_string(a));
    for (int o = 0; o < kOccupations; ++o) feats.user_names.push_back("occupation=" + std::to_string(o));
    feats.user_onehot_blocks = {{0, 2}, {2, 2 + n_age}, {2 + n_age, d_u}};

    detail::for_each_line(users_path, [&](std::size_t n, std::string_view line) {
        const auto f = checked(users_path, n, line, 5);
        std::int64_t id = 0;
        int age = 0, occupation = 0;
        if (!parse_number(f[0], id) || !parse_number(f[2], age) || !parse_number(f[3], occupation)) {
            throw ParseError(users_path, n, "non-numeric field");
        }
        const auto row = users.index(id);
        const auto g = detail::trim(f[1]);
        if (g == "M") {
            feats.user(row, 0) = 1.0;
        } else if (g == "F") {
            feats.user(row, 1) = 1.0;
        } else {
            throw ParseError(users_path, n, "unknown gender");
        }
        auto it = std::find(ages.begin(), ages.end(), age);
        if (it == ages.end()) throw ParseError(users_path, n, "unknown age bucket");
        feats.user(row, 2 + (it - ages.begin())) = 1.0;
        if (occupation < 0 || occupation >= kOccupations) throw ParseError(users_path, n, "unknown occupation");
        feats.user(row, 2 + n_age + occupation) = 1.0;
    });

    const auto& genres = ml1m_genres();
    const int n_genre = static_cast<int>(genres.size());
    feats.item = Matrix<double>::Zero(static_cast<Eigen::Index>(items.size()), n_genre + 1);
    feats.item_names = genres;
    feats.item_names.push_back("release_year");
    std::vector<bool> has_year(items.size(), false);
    detail::for_each_line(movies_path, [&](std::size_t n, std::string_view line) {
        const auto f = checked(movies_path, n, line, 3);
        std::int64_t id = 0;
        parse_number(f[0], id);
        const auto row = items.index(id);
        for (auto g : split(detail::trim(f[2]), "|")) {
            auto it = std::find(genres.begin(), genres.end(), detail::trim(g));
            if (it == genres.end()) throw ParseError(movies_path, n, "unknown genre");
            feats.item(row, it - genres.begin()) = 1.0;
        }
        int year = 0;
        if (detail::title_year(f[1], year)) {
            feats.item(row, n_genre) = year;
            has_year[static_cast<std::size_t>(row)] = true;
        }
    });
    detail::minmax_normalize(feats.item, n_genre, has_year);

    std::vector<detail::RawRating> raw;
    detail::for_each_line(ratings_path, [&](std::size_t n, std::string_view line) {
        raw.push_back(detail::parse_rating_fields(checked(ratings_path, n, line, 4), ratings_path, n));
    });
    if (raw.empty()) throw Error(ratings_path + ": no rating events");
    RatingDataset ds{detail::index_ratings(raw, users, items), std::move(users), std::move(items)};
    return {std::move(ds), std::move(feats)};
}

/// Per-user and per-item event counts.
inline std::pair<CountVector, CountVector> rating_counts(const RatingDataset& ds) {
    CountVector users = CountVector::Zero(ds.num_users());
    CountVector items = CountVector::Zero(ds.num_items());
    for (const auto& e : ds.events) {
        ++users(e.user);
        ++items(e.item);
    }
    return {users, items};
}

namespace detail {

/// Moves round(fraction * |train|) uniformly chosen events from train into
/// the returned holdout list. Both lists keep their original relative order.
inline std::vector<RatingEvent> carve(std::vector<RatingEvent>& events, double fraction, Rng& rng) {
    const auto n = events.size();
    const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order.begin(), order.end());
    std::vector<bool> picked(n, false);
    for (std::size_t i = 0; i < k; ++i) picked[order[i]] = true;
    std::vector<RatingEvent> kept, carved;
    kept.reserve(n - k);
    carved.reserve(k);
    for (std::size_t i = 0; i < n; ++i) {
        (picked[i] ? carved : kept).push_back(events[i]);
    }
    events = std::move(kept);
    return carved;
}

inline void check_fraction(double f, const char* name) {
    if (!(f >= 0.0 && f < 1.0)) {
        throw ConfigError(std::string(name) + " must lie in [0, 1)");
    }
}

inline SplitBundle finish_split(const RatingDataset& like, std::vector<RatingEvent> train,
                                std::vector<RatingEvent> holdout, std::vector<RatingEvent> test) {
    SplitBundle b{like.with_events(std::move(train)), like.with_events(std::move(holdout)),
                  like.with_events(std::move(test)), {}, {}};
    std::tie(b.user_train_counts, b.item_train_counts) = rating_counts(b.train);
    return b;
}

}  // namespace detail

/// Loads a provided ML-100K split (u1.base / u1.test style files) and draws
/// the holdout uniformly per event from the base portion.
///
/// When `reference` is given its index maps are used, so that the split lines
/// up with the feature matrices of a full parse; otherwise the maps cover the
/// union of ids seen in the two files.
inline SplitBundle load_ml100k_split(const std::string& base_path, const std::string& test_path,
                                     double holdout_fraction, std::uint64_t seed,
                                     const RatingDataset* reference = nullptr) {
    detail::check_fraction(holdout_fraction, "holdout_fraction");
    const auto base_raw = detail::read_ratings(base_path, "\t");
    const auto test_raw = detail::read_ratings(test_path, "\t");

    RatingDataset maps;
    if (reference != nullptr) {
        maps.users = reference->users;
        maps.items = reference->items;
    } else {
        std::vector<std::int64_t> u, i;
        for (const auto* part : {&base_raw, &test_raw}) {
            for (const auto& r : *part) {
                u.push_back(r.user);
                i.push_back(r.item);
            }
        }
        maps.users = IndexMap(std::move(u));
        maps.items = IndexMap(std::move(i));
    }

    auto train = detail::index_ratings(base_raw, maps.users, maps.items);
    auto test = detail::index_ratings(test_raw, maps.users, maps.items);

    std::set<std::pair<std::int32_t, std::int32_t>> base_pairs;
    for (const auto& e : train) base_pairs.emplace(e.user, e.item);
    for (const auto& e : test) {
        if (base_pairs.count({e.user, e.item}) != 0) {
            throw IntegrityError("pair (" + std::to_string(maps.users.raw(e.user)) + ", " +
                                 std::to_string(maps.items.raw(e.item)) + ") appears in both " +
                                 base_path + " and " + test_path);
        }
    }

    Rng rng(seed);
    auto holdout = detail::carve(train, holdout_fraction, rng);
    return detail::finish_split(maps, std::move(train), std::move(holdout), std::move(test));
}

/// Uniform out-of-sample split over events. `test_fraction` is a fraction of
/// all events; `holdout_fraction` is a fraction of the remaining training part.
inline SplitBundle random_split(const RatingDataset& dataset, double test_fraction, double holdout_fraction,
                                std::uint64_t seed) {
    detail::check_fraction(test_fraction, "test_fraction");
    detail::check_fraction(holdout_fraction, "holdout_fraction");
    if (test_fraction + holdout_fraction >= 1.0) {
        throw ConfigError("test_fraction + holdout_fraction must be < 1");
    }
    Rng rng(seed);
    auto train = dataset.events;
    auto test = detail::carve(train, test_fraction, rng);
    auto holdout = detail::carve(train, holdout_fraction, rng);
    return detail::finish_split(dataset, std::move(train), std::move(holdout), std::move(test));
}

/// Writes one "user,item,rating,timestamp" line per event using raw ids.
inline void write_triples(std::ostream& out, const RatingDataset& ds) {
    for (const auto& e : ds.events) {
        out << ds.users.raw(e.user) << ',' << ds.items.raw(e.item) << ',' << static_cast<int>(e.rating) << ','
            << e.timestamp << '\n';
    }
}

/// Reads the canonical CSV export back. Index maps cover the ids present.
inline RatingDataset read_triples(const std::string& path) {
    std::vector<detail::RawRating> raw;
    detail::for_each_line(path, [&](std::size_t n, std::string_view line) {
        raw.push_back(detail::parse_rating_fields(detail::split(line, ","), path, n));
    });
    std::vector<std::int64_t> u, i;
    for (const auto& r : raw) {
        u.push_back(r.user);
        i.push_back(r.item);
    }
    RatingDataset ds;
    ds.users = IndexMap(std::move(u));
    ds.items = IndexMap(std::move(i));
    ds.events = detail::index_ratings(raw, ds.users, ds.items);
    return ds;
}

/// Dense M x N rating matrix with its observation mask.
template <typename Scalar>
MaskedMatrix<Scalar> to_masked_matrix(const RatingDataset& ds) {
    MaskedMatrix<Scalar> m{Matrix<Scalar>::Zero(ds.num_users(), ds.num_items()),
                           Matrix<Scalar>::Zero(ds.num_users(), ds.num_items())};
    for (const auto& e : ds.events) {
        m.values(e.user, e.item) = static_cast<Scalar>(e.rating);
        m.mask(e.user, e.item) = Scalar(1);
    }
    return m;
}

}  // namespace modurec
