/**
 * Minimal OBO reader: [Term] stanzas with id / name / synonym /
 * is_obsolete. Everything else (other tags, other stanza types) is
 * skipped; obsolete terms are dropped since they carry no live labels.
 */

export interface OboTerm {
  id: string;
  name: string;
  synonyms: string[];
}

export class OboParseError extends Error {
  constructor(message: string, readonly line: number) {
    super(`line ${line}: ${message}`);
    this.name = "OboParseError";
  }
}

const TERM_ID = /^[A-Za-z][A-Za-z0-9_]*:[A-Za-z0-9_.]+$/;

function firstQuoted(value: string): string | null {
  const match = value.match(/"((?:[^"\\]|\\.)*)"/);
  if (!match) return null;
  return match[1].replace(/\\"/g, '"').replace(/\\\\/g, "\\");
}

export function parseObo(text: string): OboTerm[] {
  const terms: OboTerm[] = [];
  let current: { id?: string; name?: string; synonyms: string[]; obsolete: boolean } | null = null;
  let stanzaLine = 0;
  let inTerm = false;

  const flush = () => {
    if (!current) return;
    if (!current.id) {
      throw new OboParseError("[Term] stanza missing id", stanzaLine);
    }
    if (!current.obsolete) {
      if (!current.name) {
        throw new OboParseError(`term ${current.id} has no name`, stanzaLine);
      }
      terms.push({ id: current.id, name: current.name, synonyms: current.synonyms });
    }
    current = null;
  };

  const lines = text.split(/\r?\n/);
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim();
    if (line.startsWith("[") && line.endsWith("]")) {
      flush();
      inTerm = line === "[Term]";
      if (inTerm) {
        stanzaLine = i + 1;
        current = { synonyms: [], obsolete: false };
      }
      continue;
    }
    if (!inTerm || !current || !line || line.startsWith("!")) continue;

    const sep = line.indexOf(":");
    if (sep === -1) continue;
    const tag = line.slice(0, sep).trim();
    const value = line.slice(sep + 1).trim();
    if (tag === "id") {
      if (!TERM_ID.test(value)) {
        throw new OboParseError(`invalid term id ${JSON.stringify(value)}`, i + 1);
      }
      current.id = value;
    } else if (tag === "name") {
      current.name = value;
    } else if (tag === "synonym") {
      const syn = firstQuoted(value);
      if (syn) current.synonyms.push(syn);
    } else if (tag === "is_obsolete") {
      current.obsolete = value.toLowerCase().startsWith("true");
    }
  }
  flush();
  return terms;
}
