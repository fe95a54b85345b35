//! Seeded synthetic Java project. The in-memory model is the ground truth
//! for methods and call edges; files are rendered from it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct MethodSpec {
    pub name: String,
    pub visibility: &'static str,
    pub is_static: bool,
    /// (class, method) pairs called with a static receiver.
    pub calls: Vec<(String, String)>,
    pub filler: usize,
}

#[derive(Debug, Clone)]
pub struct ClassSpec {
    pub package: String,
    pub name: String,
    pub methods: Vec<MethodSpec>,
}

impl ClassSpec {
    pub fn rel_path(&self) -> String {
        format!("src/{}/{}.java", self.package, self.name)
    }

    pub fn render(&self) -> String {
        let mut s = format!("package {};\n\nimport java.util.List;\n\n", self.package);
        s.push_str(&format!("public class {} {{\n", self.name));
        s.push_str("    private int counter;\n\n");
        for m in &self.methods {
            let vis = if m.visibility.is_empty() {
                String::new()
            } else {
                format!("{} ", m.visibility)
            };
            let st = if m.is_static { "static " } else { "" };
            s.push_str(&format!("    /** {} */\n", m.name));
            s.push_str(&format!("    {vis}{st}int {}(int x, String label) {{\n", m.name));
            s.push_str("        int acc = x;\n");
            for i in 0..m.filler {
                s.push_str(&format!("        acc = acc * 31 + label.length() + {i};\n"));
            }
            for (c, n) in &m.calls {
                s.push_str(&format!("        acc += {c}.{n}(acc, label);\n"));
            }
            s.push_str("        return acc;\n    }\n\n");
        }
        s.push_str("}\n");
        s
    }
}

pub struct Corpus {
    pub root: PathBuf,
    pub classes: BTreeMap<String, ClassSpec>,
    rng: ChaCha8Rng,
    next_id: usize,
}

fn all_methods(classes: &BTreeMap<String, ClassSpec>) -> Vec<(String, String)> {
    classes
        .values()
        .flat_map(|c| {
            c.methods
                .iter()
                .filter(|m| m.is_static)
                .map(move |m| (c.name.clone(), m.name.clone()))
        })
        .collect()
}

impl Corpus {
    pub fn generate(root: &Path, seed: u64, files: usize) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut classes = BTreeMap::new();
        for k in 0..files {
            let c = Self::new_class(&mut rng, k);
            classes.insert(c.name.clone(), c);
        }
        let targets = all_methods(&classes);
        for c in classes.values_mut() {
            for m in &mut c.methods {
                let n = rng.random_range(0..4);
                m.calls = (0..n).map(|_| targets.choose(&mut rng).unwrap().clone()).collect();
            }
        }
        let corpus = Corpus {
            root: root.to_path_buf(),
            classes,
            rng,
            next_id: files,
        };
        for c in corpus.classes.values() {
            corpus.write(c);
        }
        corpus
    }

    fn new_class(rng: &mut ChaCha8Rng, k: usize) -> ClassSpec {
        let n = rng.random_range(3..9);
        let methods = (0..n)
            .map(|j| MethodSpec {
                name: format!("op{k}_{j}"),
                visibility: ["public", "public", "protected", "private", ""].choose(rng).unwrap(),
                is_static: true,
                calls: Vec::new(),
                filler: rng.random_range(2..12),
            })
            .collect();
        ClassSpec {
            package: format!("pkg{}", k % 10),
            name: format!("Unit{k}"),
            methods,
        }
    }

    fn write(&self, c: &ClassSpec) {
        let p = self.root.join(c.rel_path());
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, c.render()).unwrap();
    }

    /// Applies one random single-file edit and returns the touched path.
    pub fn random_edit(&mut self) -> PathBuf {
        let names: Vec<String> = self.classes.keys().cloned().collect();
        let pick = names.choose(&mut self.rng).unwrap().clone();
        let kind = self.rng.random_range(0..5);
        let targets = all_methods(&self.classes);
        match kind {
            0 => {
                // delete the file
                let c = self.classes.remove(&pick).unwrap();
                let rel = c.rel_path();
                fs::remove_file(self.root.join(&rel)).unwrap();
                PathBuf::from(rel)
            }
            1 => {
                // add a new file calling into existing methods
                let k = self.next_id;
                self.next_id += 1;
                let mut c = Self::new_class(&mut self.rng, k);
                for m in &mut c.methods {
                    m.calls = vec![targets.choose(&mut self.rng).unwrap().clone()];
                }
                self.write(&c);
                let rel = c.rel_path();
                self.classes.insert(c.name.clone(), c);
                PathBuf::from(rel)
            }
            2 => {
                // add a method
                let c = self.classes.get_mut(&pick).unwrap();
                let j = c.methods.len() + 100;
                let name = format!("{}_extra{j}", c.name.to_lowercase());
                c.methods.push(MethodSpec {
                    name,
                    visibility: "public",
                    is_static: true,
                    calls: vec![targets.choose(&mut self.rng).unwrap().clone()],
                    filler: 3,
                });
                let c = c.clone();
                self.write(&c);
                PathBuf::from(c.rel_path())
            }
            3 => {
                // delete a method
                let c = self.classes.get_mut(&pick).unwrap();
                if c.methods.len() > 1 {
                    let i = self.rng.random_range(0..c.methods.len());
                    c.methods.remove(i);
                }
                let c = c.clone();
                self.write(&c);
                PathBuf::from(c.rel_path())
            }
            _ => {
                // rewire calls and change a body
                let c = self.classes.get_mut(&pick).unwrap();
                let i = self.rng.random_range(0..c.methods.len());
                let m = &mut c.methods[i];
                m.filler = self.rng.random_range(1..6);
                m.calls = (0..self.rng.random_range(0..3))
                    .map(|_| targets.choose(&mut self.rng).unwrap().clone())
                    .collect();
                let c = c.clone();
                self.write(&c);
                PathBuf::from(c.rel_path())
            }
        }
    }

    pub fn method_count(&self) -> usize {
        self.classes.values().map(|c| c.methods.len()).sum()
    }
}
