// Minimal JSON-Schema checker covering the subset the shipped schemas use
// (type, required, properties, items, enum, bounds). Forms validate user
// input against the same schema documents the server enforces.

export interface SchemaIssue {
  path: string;
  message: string;
}

type Schema = {
  type?: string;
  required?: string[];
  properties?: Record<string, Schema>;
  additionalProperties?: boolean | Schema;
  items?: Schema;
  minItems?: number;
  maxItems?: number;
  enum?: unknown[];
  minimum?: number;
  maximum?: number;
  exclusiveMinimum?: number;
  oneOf?: Schema[];
  $defs?: Record<string, Schema>;
  $ref?: string;
};

function typeOf(value: unknown): string {
  if (value === null) return "null";
  if (Array.isArray(value)) return "array";
  if (typeof value === "number") return Number.isInteger(value) ? "integer" : "number";
  return typeof value;
}

function matchesType(value: unknown, wanted: string): boolean {
  const actual = typeOf(value);
  if (wanted === "number") return actual === "number" || actual === "integer";
  return actual === wanted;
}

export function validate(doc: unknown, schema: Schema, root?: Schema): SchemaIssue[] {
  const issues: SchemaIssue[] = [];
  walk(doc, schema, root ?? schema, "$", issues);
  return issues;
}

function resolve(schema: Schema, root: Schema): Schema {
  if (schema.$ref) {
    const parts = schema.$ref.replace(/^#\//, "").split("/");
    let node: unknown = root;
    for (const part of parts) {
      node = (node as Record<string, unknown>)[part];
      if (node === undefined) return {};
    }
    return node as Schema;
  }
  return schema;
}

function walk(value: unknown, schema: Schema, root: Schema, path: string, out: SchemaIssue[]): void {
  schema = resolve(schema, root);
  if (schema.oneOf) {
    const ok = schema.oneOf.some((s) => validate(value, resolve(s, root), root).length === 0);
    if (!ok) out.push({ path, message: "matches none of the allowed forms" });
    return;
  }
  if (schema.type && !matchesType(value, schema.type)) {
    out.push({ path, message: `expected ${schema.type}, got ${typeOf(value)}` });
    return;
  }
  if (schema.enum && !schema.enum.some((e) => e === value)) {
    out.push({ path, message: `must be one of ${JSON.stringify(schema.enum)}` });
    return;
  }
  if (typeof value === "number") {
    if (schema.minimum !== undefined && value < schema.minimum) {
      out.push({ path, message: `must be >= ${schema.minimum}` });
    }
    if (schema.maximum !== undefined && value > schema.maximum) {
      out.push({ path, message: `must be <= ${schema.maximum}` });
    }
    if (schema.exclusiveMinimum !== undefined && value <= schema.exclusiveMinimum) {
      out.push({ path, message: `must be > ${schema.exclusiveMinimum}` });
    }
  }
  if (Array.isArray(value)) {
    if (schema.minItems !== undefined && value.length < schema.minItems) {
      out.push({ path, message: `needs at least ${schema.minItems} items` });
    }
    if (schema.maxItems !== undefined && value.length > schema.maxItems) {
      out.push({ path, message: `allows at most ${schema.maxItems} items` });
    }
    if (schema.items) {
      value.forEach((item, i) => walk(item, schema.items as Schema, root, `${path}[${i}]`, out));
    }
    return;
  }
  if (value !== null && typeof value === "object") {
    const record = value as Record<string, unknown>;
    for (const key of schema.required ?? []) {
      if (!(key in record)) out.push({ path, message: `missing required field '${key}'` });
    }
    if (schema.properties) {
      for (const [key, sub] of Object.entries(schema.properties)) {
        if (key in record) walk(record[key], sub, root, `${path}.${key}`, out);
      }
      if (schema.additionalProperties === false) {
        for (const key of Object.keys(record)) {
          if (!(key in schema.properties)) {
            out.push({ path: `${path}.${key}`, message: "unexpected field" });
          }
        }
      }
    }
  }
}
