// Span selection over a rendered document, with granularity inferred from
// the span boundaries (and an explicit override available in the UI).

import type { DocumentJson, Granularity, MaskSpec } from "./types.js";

export interface Selection {
  paragraph: number;
  line: number | null;
  wordStart: number | null;
  wordCount: number | null;
  granularity: Granularity;
}

export function inferGranularity(
  doc: DocumentJson,
  paragraph: number,
  line: number | null,
  wordStart: number | null,
  wordCount: number | null,
): Granularity {
  const para = doc.paragraphs[paragraph];
  if (!para) {
    throw new Error(`selection out of range: paragraph ${paragraph}`);
  }
  if (line === null) {
    return "paragraph";
  }
  const target = para.lines[line];
  if (!target) {
    throw new Error(`selection out of range: paragraph ${paragraph}, line ${line}`);
  }
  if (wordStart === null || wordCount === null || wordCount >= target.words.length) {
    return "line";
  }
  return wordCount === 1 ? "word" : "phrase";
}

export function makeSelection(
  doc: DocumentJson,
  paragraph: number,
  line: number | null = null,
  wordStart: number | null = null,
  wordCount: number | null = null,
  override: Granularity | null = null,
): Selection {
  const inferred = inferGranularity(doc, paragraph, line, wordStart, wordCount);
  const granularity = override ?? inferred;
  if (granularity === "word" && (wordCount ?? 1) !== 1) {
    throw new Error("word selections span exactly one word");
  }
  return { paragraph, line, wordStart, wordCount, granularity };
}

export function selectionText(doc: DocumentJson, sel: Selection): string {
  const para = doc.paragraphs[sel.paragraph];
  if (!para) {
    throw new Error(`selection paragraph ${sel.paragraph} out of range`);
  }
  if (sel.line === null) {
    return para.lines.map((l) => l.words.map((w) => w.text).join(" ")).join("\n");
  }
  const line = para.lines[sel.line];
  if (!line) {
    throw new Error(`selection line ${sel.line} out of range`);
  }
  const words = line.words.map((w) => w.text);
  if (sel.wordStart === null || sel.wordCount === null) {
    return words.join(" ");
  }
  return words.slice(sel.wordStart, sel.wordStart + sel.wordCount).join(" ");
}

export function selectionSyllables(doc: DocumentJson, sel: Selection): number {
  const para = doc.paragraphs[sel.paragraph];
  if (!para) {
    throw new Error(`selection paragraph ${sel.paragraph} out of range`);
  }
  const sum = (words: { syllables: number }[]) =>
    words.reduce((acc, w) => acc + w.syllables, 0);
  if (sel.line === null) {
    return para.lines.reduce((acc, l) => acc + sum(l.words), 0);
  }
  const line = para.lines[sel.line];
  if (!line) {
    throw new Error(`selection line ${sel.line} out of range`);
  }
  if (sel.wordStart === null || sel.wordCount === null) {
    return sum(line.words);
  }
  return sum(line.words.slice(sel.wordStart, sel.wordStart + sel.wordCount));
}

export function selectionToMask(sel: Selection, syllables?: number): MaskSpec {
  const mask: MaskSpec = { paragraph: sel.paragraph, granularity: sel.granularity };
  if (sel.granularity !== "paragraph") {
    if (sel.line === null) {
      throw new Error("sub-paragraph masks need a line");
    }
    mask.line = sel.line;
  }
  if (sel.granularity === "word" || sel.granularity === "phrase") {
    mask.word_start = sel.wordStart ?? 0;
    mask.word_count = sel.wordCount ?? 1;
  }
  if (syllables !== undefined) {
    mask.syllables = syllables;
  }
  return mask;
}
