//! Built-in toy corpus of small Java methods, and helpers that turn Java
//! sources into sentence-split documents.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::encoder::Document;
use crate::error::{Error, Result};
use crate::lexer::{group_by_line, lex, split_sentences, strip_comments, Token};

/// Fifty self-contained Java methods. Each method is one document, each of
/// its non-empty lines one sentence.
pub const TOY_FUNCTIONS: [&str; 50] = [
    r#"public int sum(int[] values) {
    int total = 0;
    for (int v : values) total += v;
    return total;
}"#,
    r#"public static int max(int a, int b) {
    if (a > b) return a;
    return b;
}"#,
    r#"private boolean isEmpty(String text) {
    return text == null || text.length() == 0;
}"#,
    r#"public String reverse(String input) {
    StringBuilder builder = new StringBuilder(input);
    builder.reverse();
    return builder.toString();
}"#,
    r#"public static long factorial(int n) {
    long result = 1;
    for (int i = 2; i <= n; i++) result *= i;
    return result;
}"#,
    r#"protected double average(double[] samples) {
    double acc = 0.0;
    for (double s : samples) acc += s;
    return acc / samples.length;
}"#,
    r#"public boolean contains(List<String> items, String target) {
    for (String item : items) if (item.equals(target)) return true;
    return false;
}"#,
    r#"public int indexOf(char[] chars, char wanted) {
    for (int k = 0; k < chars.length; k++) if (chars[k] == wanted) return k;
    return -1;
}"#,
    r#"public void swap(int[] arr, int i, int j) {
    int tmp = arr[i];
    arr[i] = arr[j];
    arr[j] = tmp;
}"#,
    r#"public static boolean isPrime(int number) {
    if (number < 2) return false;
    for (int d = 2; d * d <= number; d++) if (number % d == 0) return false;
    return true;
}"#,
    r#"public int countWords(String sentence) {
    String[] parts = sentence.trim().split(" ");
    return parts.length;
}"#,
    r#"public static int gcd(int x, int y) {
    while (y != 0) { int r = x % y; x = y; y = r; }
    return x;
}"#,
    r#"public Map<String, Integer> histogram(List<String> words) {
    Map<String, Integer> counts = new HashMap<>();
    for (String w : words) counts.merge(w, 1, Integer::sum);
    return counts;
}"#,
    r#"public boolean isPalindrome(String word) {
    int left = 0, right = word.length() - 1;
    while (left < right) if (word.charAt(left++) != word.charAt(right--)) return false;
    return true;
}"#,
    r#"public static double celsiusToFahrenheit(double celsius) {
    double scaled = celsius * 9 / 5;
    return scaled + 32;
}"#,
    r#"public int fibonacci(int n) {
    int prev = 0, curr = 1;
    for (int step = 0; step < n; step++) { int next = prev + curr; prev = curr; curr = next; }
    return prev;
}"#,
    r#"public final String repeat(String unit, int times) {
    StringBuilder out = new StringBuilder();
    for (int c = 0; c < times; c++) out.append(unit);
    return out.toString();
}"#,
    r#"public static int[] copyOf(int[] source) {
    int[] copy = new int[source.length];
    System.arraycopy(source, 0, copy, 0, source.length);
    return copy;
}"#,
    r#"public void clearCache() {
    synchronized (lock) { cache.clear(); }
    hits = 0;
    misses = 0;
}"#,
    r#"public int getCount() {
    return this.count;
}"#,
    r#"public void setName(String name) {
    if (name == null) throw new IllegalArgumentException("name");
    this.name = name;
}"#,
    r#"public static String capitalize(String str) {
    if (str.isEmpty()) return str;
    char head = Character.toUpperCase(str.charAt(0));
    return head + str.substring(1);
}"#,
    r#"public long sumOfSquares(int limit) {
    long squares = 0L;
    for (int q = 1; q <= limit; q++) squares += (long) q * q;
    return squares;
}"#,
    r#"public boolean allPositive(int[] numbers) {
    for (int num : numbers) if (num <= 0) return false;
    return true;
}"#,
    r#"public static byte checksum(byte[] data) {
    byte crc = 0;
    for (byte b : data) crc ^= b;
    return crc;
}"#,
    r#"private int clamp(int value, int low, int high) {
    if (value < low) return low;
    if (value > high) return high;
    return value;
}"#,
    r#"public double distance(double x1, double y1, double x2, double y2) {
    double dx = x2 - x1;
    double dy = y2 - y1;
    return Math.sqrt(dx * dx + dy * dy);
}"#,
    r#"public String joinWith(List<String> pieces, String delimiter) {
    StringJoiner joiner = new StringJoiner(delimiter);
    pieces.forEach(joiner::add);
    return joiner.toString();
}"#,
    r#"public static int binarySearch(int[] sorted, int key) {
    int lo = 0, hi = sorted.length - 1;
    while (lo <= hi) { int mid = (lo + hi) >>> 1; if (sorted[mid] < key) lo = mid + 1; else if (sorted[mid] > key) hi = mid - 1; else return mid; }
    return -(lo + 1);
}"#,
    r#"public void bubbleSort(int[] data) {
    for (int pass = 0; pass < data.length; pass++)
        for (int idx = 1; idx < data.length - pass; idx++)
            if (data[idx - 1] > data[idx]) swap(data, idx - 1, idx);
}"#,
    r#"public Optional<User> findUser(long id) {
    User user = repository.get(id);
    return Optional.ofNullable(user);
}"#,
    r#"public static boolean isLeapYear(int year) {
    boolean divisible = year % 4 == 0;
    return divisible && (year % 100 != 0 || year % 400 == 0);
}"#,
    r#"public int countVowels(String phrase) {
    int vowels = 0;
    for (char ch : phrase.toCharArray()) if ("aeiou".indexOf(ch) >= 0) vowels++;
    return vowels;
}"#,
    r#"public float scale(float amount, float factor) {
    float scaledAmount = amount * factor;
    return Math.round(scaledAmount * 100) / 100.0f;
}"#,
    r#"public synchronized void increment() {
    counter++;
    lastUpdated = System.currentTimeMillis();
}"#,
    r#"public List<Integer> evens(List<Integer> input) {
    List<Integer> evenValues = new ArrayList<>();
    for (Integer e : input) if (e % 2 == 0) evenValues.add(e);
    return evenValues;
}"#,
    r#"public static String toBinary(int decimal) {
    if (decimal == 0) return "0";
    StringBuilder bits = new StringBuilder();
    while (decimal > 0) { bits.insert(0, decimal % 2); decimal /= 2; }
    return bits.toString();
}"#,
    r#"public boolean equals(Object other) {
    if (this == other) return true;
    if (!(other instanceof Point)) return false;
    Point p = (Point) other;
    return x == p.x && y == p.y;
}"#,
    r#"public int hashCode() {
    int h = 17;
    h = 31 * h + x;
    h = 31 * h + y;
    return h;
}"#,
    r#"public void close() throws IOException {
    if (stream != null) stream.close();
    closed = true;
}"#,
    r#"public String readFirstLine(Path file) throws IOException {
    try (BufferedReader reader = Files.newBufferedReader(file)) {
        return reader.readLine();
    }
}"#,
    r#"public static short toShort(int wide) {
    if (wide > Short.MAX_VALUE) return Short.MAX_VALUE;
    return (short) wide;
}"#,
    r#"public int minIndex(double[] costs) {
    int best = 0;
    for (int j = 1; j < costs.length; j++) if (costs[j] < costs[best]) best = j;
    return best;
}"#,
    r#"public void push(T element) {
    ensureCapacity(size + 1);
    elements[size++] = element;
}"#,
    r#"public T pop() {
    if (size == 0) throw new EmptyStackException();
    T top = elements[--size];
    elements[size] = null;
    return top;
}"#,
    r#"public boolean startsWithDigit(String token) {
    return !token.isEmpty() && Character.isDigit(token.charAt(0));
}"#,
    r#"public static int[][] transpose(int[][] matrix) {
    int[][] flipped = new int[matrix[0].length][matrix.length];
    for (int r = 0; r < matrix.length; r++) for (int c = 0; c < matrix[0].length; c++) flipped[c][r] = matrix[r][c];
    return flipped;
}"#,
    r#"public long elapsedMillis(long startNanos) {
    long now = System.nanoTime();
    return (now - startNanos) / 1000000;
}"#,
    r#"public String describe() {
    String label = enabled ? "on" : "off";
    return getClass().getSimpleName() + "[" + label + "]";
}"#,
    r#"public static char lastChar(String value) {
    int last = value.length() - 1;
    return value.charAt(last);
}"#,
];

/// Strips comments from a Java source and splits it into one sentence of
/// token texts per non-empty line.
pub fn document_from_source(source: &str) -> Result<Document> {
    let stripped = strip_comments(source)?;
    Ok(split_sentences(&stripped)?
        .into_iter()
        .map(|line| line.into_iter().map(|t| t.text).collect())
        .collect())
}

/// The toy corpus as sentence-split documents.
pub fn toy_documents() -> Vec<Document> {
    TOY_FUNCTIONS
        .iter()
        .map(|f| document_from_source(f).expect("toy corpus lexes"))
        .collect()
}

/// Every token text of `documents`, for vocabulary training.
pub fn words(documents: &[Document]) -> impl Iterator<Item = &str> {
    documents.iter().flatten().flatten().map(String::as_str)
}

/// A comment-stripped, lexed source file split into line sentences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreparedDocument {
    pub name: String,
    /// Source with comments removed; token spans index into it.
    pub source: String,
    pub sentences: Vec<Vec<Token>>,
}

impl PreparedDocument {
    pub fn from_source(name: impl Into<String>, source: &str) -> Result<Self> {
        let stripped = strip_comments(source)?;
        let sentences = group_by_line(lex(&stripped)?);
        Ok(PreparedDocument {
            name: name.into(),
            source: stripped,
            sentences,
        })
    }

    pub fn tokens(&self) -> Vec<Token> {
        self.sentences.iter().flatten().cloned().collect()
    }

    pub fn document(&self) -> Document {
        self.sentences
            .iter()
            .map(|s| s.iter().map(|t| t.text.clone()).collect())
            .collect()
    }
}

/// The toy corpus as prepared documents named `toy_NN.java`.
pub fn toy_prepared() -> Vec<PreparedDocument> {
    TOY_FUNCTIONS
        .iter()
        .enumerate()
        .map(|(i, f)| PreparedDocument::from_source(format!("toy_{i:02}.java"), f).expect("toy corpus lexes"))
        .collect()
}

/// One JSON document per line.
pub fn write_prepared<W: Write>(mut out: W, docs: &[PreparedDocument]) -> Result<()> {
    for d in docs {
        serde_json::to_writer(&mut out, d)?;
        out.write_all(b"\n").map_err(|e| Error::io("<corpus>", e))?;
    }
    Ok(())
}

pub fn read_prepared<R: BufRead>(input: R) -> Result<Vec<PreparedDocument>> {
    let mut docs = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("<corpus>", e))?;
        if !line.trim().is_empty() {
            docs.push(serde_json::from_str(&line)?);
        }
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn toy_corpus_is_lexable_and_distinct() {
        let docs = toy_documents();
        assert_eq!(docs.len(), 50);
        assert!(docs.iter().all(|d| d.len() >= 2));
        let unique: HashSet<&str> = TOY_FUNCTIONS.iter().copied().collect();
        assert_eq!(unique.len(), 50);
    }

    #[test]
    fn prepared_round_trip() {
        let docs = toy_prepared();
        let mut buf = Vec::new();
        write_prepared(&mut buf, &docs[..3]).unwrap();
        assert_eq!(read_prepared(&buf[..]).unwrap(), docs[..3].to_vec());
        assert_eq!(docs[0].document(), toy_documents()[0]);
    }
}
