/// Pattern-issue indicators and the expected status / pattern groupings.
pub const RECODING_ROWS: [([u8; 5], &str, &str); 32] = [
    ([0, 0, 0, 0, 0], "12345, 6", "1, 2, 3, 4, 5, 6"),
    ([1, 0, 0, 0, 0], "12345, 6", "12, 3, 4, 5, 6"),
    ([0, 1, 0, 0, 0], "12345, 6", "12, 3, 4, 5, 6"),
    ([0, 0, 1, 0, 0], "12345, 6", "1, 23, 4, 5, 6"),
    ([0, 0, 0, 1, 0], "12345, 6", "1, 2, 34, 5, 6"),
    ([0, 0, 0, 0, 1], "12345, 6", "1, 2, 3, 45, 6"),
    ([1, 1, 0, 0, 0], "12345, 6", "123, 4, 5, 6"),
    ([1, 0, 1, 0, 0], "12345, 6", "123, 4, 5, 6"),
    ([0, 1, 1, 0, 0], "12345, 6", "123, 4, 5, 6"),
    ([0, 0, 1, 1, 0], "12345, 6", "1, 234, 5, 6"),
    ([0, 0, 0, 1, 1], "12345, 6", "1, 2, 345, 6"),
    ([1, 0, 0, 1, 0], "12345, 6", "12, 34, 5, 6"),
    ([0, 1, 0, 1, 0], "12345, 6", "12, 34, 5, 6"),
    ([1, 0, 0, 0, 1], "12345, 6", "12, 3, 45, 6"),
    ([0, 1, 0, 0, 1], "12345, 6", "12, 3, 45, 6"),
    ([0, 0, 1, 0, 1], "12345, 6", "1, 23, 45, 6"),
    ([1, 1, 0, 1, 0], "12345, 6", "1234, 5, 6"),
    ([1, 0, 1, 1, 0], "12345, 6", "1234, 5, 6"),
    ([1, 1, 1, 0, 0], "12345, 6", "1234, 5, 6"),
    ([0, 1, 1, 1, 0], "12345, 6", "1234, 5, 6"),
    ([0, 0, 1, 1, 1], "12345, 6", "1, 2345, 6"),
    ([1, 1, 0, 0, 1], "12345, 6", "123, 45, 6"),
    ([1, 0, 1, 0, 1], "12345, 6", "123, 45, 6"),
    ([0, 1, 1, 0, 1], "12345, 6", "123, 45, 6"),
    ([1, 0, 0, 1, 1], "12345, 6", "12, 345, 6"),
    ([0, 1, 0, 1, 1], "12345, 6", "12, 345, 6"),
    ([1, 1, 1, 1, 0], "12345, 6", "12345, 6"),
    ([1, 1, 1, 0, 1], "12345, 6", "12345, 6"),
    ([1, 1, 0, 1, 1], "12345, 6", "12345, 6"),
    ([1, 0, 1, 1, 1], "12345, 6", "12345, 6"),
    ([0, 1, 1, 1, 1], "12345, 6", "12345, 6"),
    ([1, 1, 1, 1, 1], "123456", "123456"),
];
