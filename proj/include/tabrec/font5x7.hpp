#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string_view>

namespace tabrec {

// Built-in 5x7 bitmap glyphs. Rows are listed top to bottom, '#' marks an ink
// pixel. Coverage is exactly the generator's content alphabet.
namespace font5x7 {

struct GlyphSource {
    char ch;
    std::string_view rows;  // 7 rows of 5, '|'-separated
};

inline constexpr GlyphSource kGlyphSources[] = {
    {'0', ".###.|#...#|#..##|#.#.#|##..#|#...#|.###."},
    {'1', "..#..|.##..|..#..|..#..|..#..|..#..|.###."},
    {'2', ".###.|#...#|....#|..##.|.#...|#....|#####"},
    {'3', ".###.|#...#|....#|..##.|....#|#...#|.###."},
    {'4', "...#.|..##.|.#.#.|#..#.|#####|...#.|...#."},
    {'5', "#####|#....|####.|....#|....#|#...#|.###."},
    {'6', ".###.|#....|#....|####.|#...#|#...#|.###."},
    {'7', "#####|....#|...#.|..#..|.#...|.#...|.#..."},
    {'8', ".###.|#...#|#...#|.###.|#...#|#...#|.###."},
    {'9', ".###.|#...#|#...#|.####|....#|....#|.###."},
    {'A', ".###.|#...#|#...#|#####|#...#|#...#|#...#"},
    {'B', "####.|#...#|#...#|####.|#...#|#...#|####."},
    {'C', ".###.|#...#|#....|#....|#....|#...#|.###."},
    {'D', "####.|#...#|#...#|#...#|#...#|#...#|####."},
    {'E', "#####|#....|#....|####.|#....|#....|#####"},
    {'F', "#####|#....|#....|####.|#....|#....|#...."},
    {'G', ".###.|#...#|#....|#.###|#...#|#...#|.###."},
    {'H', "#...#|#...#|#...#|#####|#...#|#...#|#...#"},
    {'I', ".###.|..#..|..#..|..#..|..#..|..#..|.###."},
    {'J', "..###|...#.|...#.|...#.|...#.|#..#.|.##.."},
    {'K', "#...#|#..#.|#.#..|##...|#.#..|#..#.|#...#"},
    {'L', "#....|#....|#....|#....|#....|#....|#####"},
    {'M', "#...#|##.##|#.#.#|#.#.#|#...#|#...#|#...#"},
    {'N', "#...#|##..#|#.#.#|#..##|#...#|#...#|#...#"},
    {'O', ".###.|#...#|#...#|#...#|#...#|#...#|.###."},
    {'P', "####.|#...#|#...#|####.|#....|#....|#...."},
    {'Q', ".###.|#...#|#...#|#...#|#.#.#|#..#.|.##.#"},
    {'R', "####.|#...#|#...#|####.|#.#..|#..#.|#...#"},
    {'S', ".####|#....|#....|.###.|....#|....#|####."},
    {'T', "#####|..#..|..#..|..#..|..#..|..#..|..#.."},
    {'U', "#...#|#...#|#...#|#...#|#...#|#...#|.###."},
    {'V', "#...#|#...#|#...#|#...#|#...#|.#.#.|..#.."},
    {'W', "#...#|#...#|#...#|#.#.#|#.#.#|##.##|#...#"},
    {'X', "#...#|#...#|.#.#.|..#..|.#.#.|#...#|#...#"},
    {'Y', "#...#|#...#|.#.#.|..#..|..#..|..#..|..#.."},
    {'Z', "#####|....#|...#.|..#..|.#...|#....|#####"},
    {'a', ".....|.....|.###.|....#|.####|#...#|.####"},
    {'b', "#....|#....|####.|#...#|#...#|#...#|####."},
    {'c', ".....|.....|.###.|#....|#....|#...#|.###."},
    {'d', "....#|....#|.####|#...#|#...#|#...#|.####"},
    {'e', ".....|.....|.###.|#...#|#####|#....|.###."},
    {'f', "..##.|.#..#|.#...|####.|.#...|.#...|.#..."},
    {'g', ".....|.####|#...#|#...#|.####|....#|.###."},
    {'h', "#....|#....|####.|#...#|#...#|#...#|#...#"},
    {'i', "..#..|.....|.##..|..#..|..#..|..#..|.###."},
    {'j', "...#.|.....|..##.|...#.|...#.|#..#.|.##.."},
    {'k', "#....|#....|#..#.|#.#..|##...|#.#..|#..#."},
    {'l', ".##..|..#..|..#..|..#..|..#..|..#..|.###."},
    {'m', ".....|.....|##.#.|#.#.#|#.#.#|#.#.#|#...#"},
    {'n', ".....|.....|####.|#...#|#...#|#...#|#...#"},
    {'o', ".....|.....|.###.|#...#|#...#|#...#|.###."},
    {'p', ".....|####.|#...#|#...#|####.|#....|#...."},
    {'q', ".....|.####|#...#|#...#|.####|....#|....#"},
    {'r', ".....|.....|#.##.|##...|#....|#....|#...."},
    {'s', ".....|.....|.####|#....|.###.|....#|####."},
    {'t', ".#...|.#...|####.|.#...|.#...|.#..#|..##."},
    {'u', ".....|.....|#...#|#...#|#...#|#...#|.####"},
    {'v', ".....|.....|#...#|#...#|#...#|.#.#.|..#.."},
    {'w', ".....|.....|#...#|#...#|#.#.#|#.#.#|.#.#."},
    {'x', ".....|.....|#...#|.#.#.|..#..|.#.#.|#...#"},
    {'y', ".....|#...#|#...#|#...#|.####|....#|.###."},
    {'z', ".....|.....|#####|...#.|..#..|.#...|#####"},
    {'.', ".....|.....|.....|.....|.....|.##..|.##.."},
    {'%', "##...|##..#|...#.|..#..|.#...|#..##|...##"},
    {'-', ".....|.....|.....|.###.|.....|.....|....."},
    {'$', "..#..|.####|#.#..|.###.|..#.#|####.|..#.."},
    {' ', ".....|.....|.....|.....|.....|.....|....."},
};

inline constexpr int kGlyphWidth = 5;
inline constexpr int kGlyphHeight = 7;
inline constexpr int kAdvance = 6;  // glyph width plus one column of spacing

struct Glyph {
    std::array<uint8_t, 7> rows{};  // low 5 bits per row, MSB-first column order
};

inline const std::map<char, Glyph>& glyphs() {
    static const std::map<char, Glyph> table = [] {
        std::map<char, Glyph> m;
        for (const auto& src : kGlyphSources) {
            Glyph g;
            int row = 0, col = 0;
            for (char c : src.rows) {
                if (c == '|') {
                    ++row;
                    col = 0;
                    continue;
                }
                if (c == '#') g.rows[static_cast<size_t>(row)] |= static_cast<uint8_t>(1u << (4 - col));
                ++col;
            }
            m.emplace(src.ch, g);
        }
        return m;
    }();
    return table;
}

inline bool has_glyph(char c) { return glyphs().count(c) > 0; }

// Pixel width of a rendered string (no trailing spacing column).
inline int text_width(std::string_view text) {
    return text.empty() ? 0 : static_cast<int>(text.size()) * kAdvance - 1;
}

inline const char* alphabet() {
    return "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz.%-$ ";
}

}  // namespace font5x7
}  // namespace tabrec
