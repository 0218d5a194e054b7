import bz2, re, sys
import xml.etree.ElementTree as ET
import mwparserfromhell as mw
src = sys.argv[1]
ns = None
sents = []
for ev, el in ET.iterparse(bz2.open(src)):
    tag = el.tag.split('}')[-1]
    if tag == 'page':
        title = ''; text = ''
        for c in el.iter():
            t = c.tag.split('}')[-1]
            if t == 'title': title = c.text or ''
            if t == 'text': text = c.text or ''
            if t == 'ns' and c.text != '0': text = ''
        el.clear()
        if not text or text.lower().startswith('#redirect'): continue
        code = mw.parse(text)
        for n in code.filter_tags(recursive=False):
            if str(n.tag) in ('ref','table','gallery','math'):
                try: code.remove(n)
                except Exception: pass
        plain = code.strip_code(normalize=True, collapse=True)
        for para in plain.split('\n'):
            para = para.strip()
            if not para or para.startswith(('|','{','!','=','*','#',':',';')): continue
            if len(para.split()) < 6: continue
            for s in re.split(r'(?<=[.!?])\s+(?=[A-Z"(])', para):
                s = re.sub(r'\s+', ' ', s).strip()
                if len(s.split()) >= 3 and s[-1:] in '.!?' and 'thumb|' not in s and '[[' not in s and '{{' not in s:
                    sents.append(s)
out = open(sys.argv[2], 'w')
for s in sents: out.write(s + '\n')
print(len(sents))
